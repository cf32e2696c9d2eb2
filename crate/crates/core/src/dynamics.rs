//! Planar (surge, sway, yaw) marine-craft model in a body-frame current.
//!
//! Equations of motion, with `nu_r = nu - nu_c`:
//!
//! ```text
//! eta_dot = J(psi) nu
//! M_RB nu_dot + C_RB(nu) nu + M_A nu_r_dot + C_A(nu_r) nu_r + D(nu_r) nu_r = tau_b
//! ```
//!
//! The hydrodynamic Coriolis and damping terms are linear in the eight unknown
//! parameters `[ca1, ca2, xu, yv, nr, xuu, yvv, nrr]`, which lets the drift be
//! split into a regressor times the parameter vector plus a known part.
//! The centre of gravity sits at the body origin and the craft is neutrally
//! buoyant, so the restoring term vanishes.

use crate::error::{Error, Result};
use crate::linalg::{wrap_angle, Mat3, Mat38, Mat63, Mat68, Vec2, Vec3, Vec6, Vec8};

pub const N_PARAMS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    /// Builds a pose with yaw wrapped into (-pi, pi].
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self { x, y, psi: wrap_angle(psi) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyVelocity {
    pub u: f64,
    pub v: f64,
    pub r: f64,
}

impl BodyVelocity {
    pub fn new(u: f64, v: f64, r: f64) -> Self {
        Self { u, v, r }
    }

    pub fn from_vector(v: &Vec3) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(&self) -> Vec3 {
        Vec3::new(self.u, self.v, self.r)
    }
}

/// Full state `zeta = [x, y, psi, u, v, r]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct State {
    pub pose: Pose,
    pub vel: BodyVelocity,
}

impl State {
    pub fn new(pose: Pose, vel: BodyVelocity) -> Self {
        Self { pose, vel }
    }

    pub fn zero() -> Self {
        Self::from_zeta(&Vec6::zeros())
    }

    /// Builds a state from a 6-vector, wrapping the yaw component.
    pub fn from_zeta(z: &Vec6) -> Self {
        Self {
            pose: Pose::new(z[0], z[1], z[2]),
            vel: BodyVelocity::new(z[3], z[4], z[5]),
        }
    }

    pub fn zeta(&self) -> Vec6 {
        Vec6::new(
            self.pose.x,
            self.pose.y,
            self.pose.psi,
            self.vel.u,
            self.vel.v,
            self.vel.r,
        )
    }

    pub fn nu(&self) -> Vec3 {
        self.vel.to_vector()
    }

    pub fn is_finite(&self) -> bool {
        self.zeta().iter().all(|v| v.is_finite())
    }
}

/// Measured body-frame current and its body-frame time derivative.
/// Irrotational: the yaw components are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Current {
    nu_c: Vec3,
    nu_c_dot: Vec3,
}

impl Current {
    pub fn new(uc: f64, vc: f64, uc_dot: f64, vc_dot: f64) -> Self {
        Self {
            nu_c: Vec3::new(uc, vc, 0.0),
            nu_c_dot: Vec3::new(uc_dot, vc_dot, 0.0),
        }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn nu_c(&self) -> Vec3 {
        self.nu_c
    }

    pub fn nu_c_dot(&self) -> Vec3 {
        self.nu_c_dot
    }
}

/// Unknown hydrodynamic parameters, ordered `[ca1, ca2, xu, yv, nr, xuu, yvv, nrr]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterVector(pub Vec8);

impl ParameterVector {
    pub fn zeros() -> Self {
        Self(Vec8::zeros())
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_PARAMS {
            return Err(Error::InvalidParameter(format!(
                "parameter vector needs {N_PARAMS} entries, got {}",
                v.len()
            )));
        }
        Ok(Self(Vec8::from_column_slice(v)))
    }

    pub fn ca1(&self) -> f64 {
        self.0[0]
    }
    pub fn ca2(&self) -> f64 {
        self.0[1]
    }
    pub fn linear_damping(&self) -> Vec3 {
        Vec3::new(self.0[2], self.0[3], self.0[4])
    }
    pub fn quadratic_damping(&self) -> Vec3 {
        Vec3::new(self.0[5], self.0[6], self.0[7])
    }
}

/// Rigid-body and added-mass data plus the plant's true hydrodynamic parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleParams {
    pub mass: f64,
    pub iz: f64,
    /// Known added-mass magnitudes `(-X_udot, -Y_vdot, -N_rdot)`.
    pub added_mass: Vec3,
    /// Ground truth, used only by the simulated plant and diagnostics.
    pub theta: ParameterVector,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 40.8,
            iz: 16.0,
            added_mass: Vec3::new(6.0, 14.0, 1.5),
            theta: ParameterVector(Vec8::from_column_slice(&[
                -14.0, -6.0, 20.0, 35.0, 6.0, 25.0, 60.0, 4.0,
            ])),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !(self.iz > 0.0) {
            return Err(Error::InvalidParameter(
                "mass and yaw inertia must be positive".into(),
            ));
        }
        if self.added_mass.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::InvalidParameter(
                "added-mass magnitudes must be non-negative".into(),
            ));
        }
        if self.theta.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite hydrodynamic parameter".into()));
        }
        Ok(())
    }

    pub fn m_rb(&self) -> Mat3 {
        Mat3::from_diagonal(&Vec3::new(self.mass, self.mass, self.iz))
    }

    pub fn m_a(&self) -> Mat3 {
        Mat3::from_diagonal(&self.added_mass)
    }
}

/// Earth-from-body rotation `J_E(eta)`.
pub fn rotation(pose: &Pose) -> Mat3 {
    let (s, c) = pose.psi.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn coriolis_rb(vel: &BodyVelocity, params: &VehicleParams) -> Mat3 {
    let m = params.mass;
    Mat3::new(
        0.0,
        0.0,
        -m * vel.v,
        0.0,
        0.0,
        m * vel.u,
        m * vel.v,
        -m * vel.u,
        0.0,
    )
}

pub fn coriolis_a(vel_rel: &BodyVelocity, theta: &ParameterVector) -> Mat3 {
    let (a1, a2) = (theta.ca1(), theta.ca2());
    Mat3::new(
        0.0,
        0.0,
        a1 * vel_rel.v,
        0.0,
        0.0,
        -a2 * vel_rel.u,
        -a1 * vel_rel.v,
        a2 * vel_rel.u,
        0.0,
    )
}

/// Linear plus quadratic diagonal damping; positive parameters oppose motion.
pub fn damping(vel_rel: &BodyVelocity, theta: &ParameterVector) -> Mat3 {
    let l = theta.linear_damping();
    let q = theta.quadratic_damping();
    Mat3::from_diagonal(&Vec3::new(
        l[0] + q[0] * vel_rel.u.abs(),
        l[1] + q[1] * vel_rel.v.abs(),
        l[2] + q[2] * vel_rel.r.abs(),
    ))
}

/// Which terms of the model are active.
///
/// `Linear` replaces the kinematics by `eta_dot = nu`, drops every Coriolis
/// term and the quadratic damping, leaving the exact linearization at the
/// station. It is the regime in which the quadratic value basis is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    #[default]
    Nonlinear,
    Linear,
}

/// Vehicle model with the mass matrices precomputed.
#[derive(Debug, Clone)]
pub struct Vehicle {
    params: VehicleParams,
    kind: ModelKind,
    m_a: Mat3,
    m_inv: Mat3,
}

impl Vehicle {
    pub fn new(params: VehicleParams) -> Result<Self> {
        Self::with_kind(params, ModelKind::Nonlinear)
    }

    pub fn with_kind(params: VehicleParams, kind: ModelKind) -> Result<Self> {
        params.validate()?;
        let m = params.m_rb() + params.m_a();
        let m_inv = m
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular inertia matrix".into()))?;
        Ok(Self {
            m_a: params.m_a(),
            m_inv,
            params,
            kind,
        })
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn true_theta(&self) -> &ParameterVector {
        &self.params.theta
    }

    pub fn mass_matrix(&self) -> Mat3 {
        self.params.m_rb() + self.m_a
    }

    pub fn mass_inverse(&self) -> &Mat3 {
        &self.m_inv
    }

    pub fn added_mass(&self) -> &Mat3 {
        &self.m_a
    }

    fn kinematics(&self, pose: &Pose) -> Mat3 {
        match self.kind {
            ModelKind::Nonlinear => rotation(pose),
            ModelKind::Linear => Mat3::identity(),
        }
    }

    /// Hydrodynamic force `C_A(nu_r) nu_r + D(nu_r) nu_r` as `H(nu_r) theta`.
    pub fn hydro_regressor(&self, vel_rel: &Vec3) -> Mat38 {
        let (u, v, r) = (vel_rel[0], vel_rel[1], vel_rel[2]);
        let mut h = Mat38::zeros();
        h[(0, 2)] = u;
        h[(1, 3)] = v;
        h[(2, 4)] = r;
        if self.kind == ModelKind::Nonlinear {
            h[(0, 0)] = v * r;
            h[(2, 0)] = -u * v;
            h[(1, 1)] = -u * r;
            h[(2, 1)] = u * v;
            h[(0, 5)] = u.abs() * u;
            h[(1, 6)] = v.abs() * v;
            h[(2, 7)] = r.abs() * r;
        }
        h
    }

    fn lift(&self, h: &Mat38) -> Mat68 {
        let mut y = Mat68::zeros();
        y.fixed_view_mut::<3, 8>(3, 0).copy_from(&(-self.m_inv * h));
        y
    }

    /// `Y(zeta, nu_c)`: regressor of the unknown drift, top rows zero.
    pub fn regressor_full(&self, state: &State, current: &Current) -> Mat68 {
        self.lift(&self.hydro_regressor(&(state.nu() - current.nu_c())))
    }

    /// `f_0(zeta, nu_c_dot)`: the drift known without the hydrodynamic parameters.
    pub fn drift_known(&self, state: &State, current_accel: &Vec3) -> Vec6 {
        let mut f = self.residual_drift(state);
        let extra = self.m_inv * (self.m_a * current_accel);
        for i in 0..3 {
            f[3 + i] += extra[i];
        }
        f
    }

    /// `g = [0; M^-1]`.
    pub fn control_effectiveness(&self) -> Mat63 {
        let mut g = Mat63::zeros();
        g.fixed_view_mut::<3, 3>(3, 0).copy_from(&self.m_inv);
        g
    }

    /// Applies `g` to a force without forming the 6x3 matrix.
    pub fn apply_effectiveness(&self, tau: &Vec3) -> Vec6 {
        let a = self.m_inv * tau;
        Vec6::new(0.0, 0.0, 0.0, a[0], a[1], a[2])
    }

    /// Regressor of the current-free residual model (nu in place of nu_r).
    pub fn residual_regressor(&self, state: &State) -> Mat68 {
        self.lift(&self.hydro_regressor(&state.nu()))
    }

    /// Known drift of the current-free residual model.
    pub fn residual_drift(&self, state: &State) -> Vec6 {
        let nu = state.nu();
        let eta_dot = self.kinematics(&state.pose) * nu;
        let nu_dot = match self.kind {
            ModelKind::Nonlinear => -(self.m_inv * (coriolis_rb(&state.vel, &self.params) * nu)),
            ModelKind::Linear => Vec3::zeros(),
        };
        Vec6::new(eta_dot[0], eta_dot[1], eta_dot[2], nu_dot[0], nu_dot[1], nu_dot[2])
    }

    /// `Y_c` with `Y_c theta = H(nu_r) theta - H(nu) theta`.
    pub fn feedforward_regressor(&self, state: &State, current: &Current) -> Mat38 {
        let nu = state.nu();
        self.hydro_regressor(&(nu - current.nu_c())) - self.hydro_regressor(&nu)
    }

    /// Estimated current compensation `-M_A nu_c_dot + Y_c theta_hat`.
    pub fn current_feedforward(
        &self,
        state: &State,
        current: &Current,
        theta_hat: &ParameterVector,
    ) -> Vec3 {
        -(self.m_a * current.nu_c_dot()) + self.feedforward_regressor(state, current) * theta_hat.0
    }

    /// Body-frame current induced by a constant earth-frame current.
    pub fn body_current_from_earth(&self, state: &State, eta_c_dot: &Vec2) -> Current {
        let (s, c) = state.pose.psi.sin_cos();
        let uc = c * eta_c_dot[0] + s * eta_c_dot[1];
        let vc = -s * eta_c_dot[0] + c * eta_c_dot[1];
        let r = state.vel.r;
        Current::new(uc, vc, r * vc, -r * uc)
    }

    /// Residual regressor, known drift and station-holding feedforward for a
    /// constant earth-frame current, where the current enters the optimal
    /// control problem through the state-dependent body current.
    pub fn constant_current_mode(
        &self,
        state: &State,
        eta_c_dot: &Vec2,
        theta: &ParameterVector,
    ) -> (Mat68, Vec6, Vec3) {
        let cur = self.body_current_from_earth(state, eta_c_dot);
        let h_ss = self.hydro_regressor(&(-cur.nu_c()));
        let h_rel = self.hydro_regressor(&(state.nu() - cur.nu_c()));
        let mut y = Mat68::zeros();
        y.fixed_view_mut::<3, 8>(3, 0)
            .copy_from(&(self.m_inv * (h_ss - h_rel)));
        let tau_c = -(self.m_a * cur.nu_c_dot()) + h_ss * theta.0;
        (y, self.residual_drift(state), tau_c)
    }

    /// Direct evaluation of the equations of motion for the true plant,
    /// using the matrix-valued Coriolis and damping terms.
    pub fn plant_derivative(&self, state: &State, current: &Current, tau: &Vec3) -> Vec6 {
        let theta = &self.params.theta;
        let nu = state.nu();
        let nu_r = nu - current.nu_c();
        let vr = BodyVelocity::from_vector(&nu_r);
        let eta_dot = self.kinematics(&state.pose) * nu;
        let forces = match self.kind {
            ModelKind::Nonlinear => {
                tau - coriolis_rb(&state.vel, &self.params) * nu
                    + self.m_a * current.nu_c_dot()
                    - coriolis_a(&vr, theta) * nu_r
                    - damping(&vr, theta) * nu_r
            }
            ModelKind::Linear => {
                tau + self.m_a * current.nu_c_dot()
                    - Mat3::from_diagonal(&theta.linear_damping()) * nu_r
            }
        };
        let nu_dot = self.m_inv * forces;
        Vec6::new(eta_dot[0], eta_dot[1], eta_dot[2], nu_dot[0], nu_dot[1], nu_dot[2])
    }
}
