//! Model-based actor-critic approximation of the optimal station-keeping policy.
//!
//! The value function is approximated by `W' sigma(zeta)` with the 21 quadratic
//! monomials of the state. The critic is trained on the Bellman error at the
//! current state and at a fixed set of extrapolation states, evaluated through
//! the identified residual model; the actor tracks the critic.

use nalgebra::Cholesky;

use crate::dynamics::{Current, ParameterVector, State, Vehicle};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig_range, symmetrize, Mat21, Mat21x6, Mat3, Mat6, Vec2, Vec21, Vec3, Vec6};

pub const BASIS_DIM: usize = 21;

/// Monomial index pairs `(i, j)`, `i <= j`, in row-major upper-triangular order.
pub const fn basis_pairs() -> [(usize, usize); BASIS_DIM] {
    let mut out = [(0, 0); BASIS_DIM];
    let mut k = 0;
    let mut i = 0;
    while i < 6 {
        let mut j = i;
        while j < 6 {
            out[k] = (i, j);
            k += 1;
            j += 1;
        }
        i += 1;
    }
    out
}

pub const PAIRS: [(usize, usize); BASIS_DIM] = basis_pairs();

/// Index of the monomial `zeta_i zeta_j` in the basis.
pub fn basis_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    PAIRS.iter().position(|&p| p == (i, j)).expect("indices below 6")
}

pub fn sigma(z: &Vec6) -> Vec21 {
    Vec21::from_fn(|k, _| {
        let (i, j) = PAIRS[k];
        z[i] * z[j]
    })
}

/// Jacobian of [`sigma`].
pub fn sigma_prime(z: &Vec6) -> Mat21x6 {
    let mut d = Mat21x6::zeros();
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        if i == j {
            d[(k, i)] = 2.0 * z[i];
        } else {
            d[(k, i)] = z[j];
            d[(k, j)] = z[i];
        }
    }
    d
}

pub fn value(w: &Vec21, z: &Vec6) -> f64 {
    w.dot(&sigma(z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: Mat6,
    r: Mat3,
    r_inv: Mat3,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::new(
            Mat6::from_diagonal(&Vec6::new(20.0, 50.0, 20.0, 10.0, 10.0, 10.0)),
            Mat3::identity(),
        )
        .expect("default weights are positive definite")
    }
}

fn check_spd<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>, name: &str) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) || (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return Err(Error::InvalidParameter(format!("{name} must be finite and symmetric")));
    }
    if sym_eig_range(m).0 <= 0.0 {
        return Err(Error::InvalidParameter(format!("{name} must be positive definite")));
    }
    Ok(())
}

impl CostWeights {
    pub fn new(q: Mat6, r: Mat3) -> Result<Self> {
        check_spd(&q, "Q")?;
        check_spd(&r, "R")?;
        let r_inv = r
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("R is singular".into()))?;
        Ok(Self { q, r, r_inv })
    }

    pub fn q(&self) -> &Mat6 {
        &self.q
    }

    pub fn r(&self) -> &Mat3 {
        &self.r
    }

    pub fn r_inv(&self) -> &Mat3 {
        &self.r_inv
    }

    /// `zeta' Q zeta + u' R u`.
    pub fn local_cost(&self, z: &Vec6, u: &Vec3) -> f64 {
        (z.transpose() * self.q * z)[0] + (u.transpose() * self.r * u)[0]
    }
}

/// Which current-free model the optimal control problem is posed on.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ResidualModel {
    /// Current removed entirely; the current is cancelled by feedforward.
    #[default]
    CurrentFree,
    /// Constant earth-frame current folded into the residual dynamics.
    ConstantCurrent { eta_c_dot: Vec2 },
}

impl ResidualModel {
    /// `Y_res theta_hat + f_0res` at `z`.
    pub fn drift(&self, vehicle: &Vehicle, z: &Vec6, theta_hat: &ParameterVector) -> Vec6 {
        let s = State::from_zeta(z);
        match self {
            ResidualModel::CurrentFree => {
                vehicle.residual_regressor(&s) * theta_hat.0 + vehicle.residual_drift(&s)
            }
            ResidualModel::ConstantCurrent { eta_c_dot } => {
                let (y, f, _) = vehicle.constant_current_mode(&s, eta_c_dot, theta_hat);
                y * theta_hat.0 + f
            }
        }
    }

    /// Estimated compensation force `tau_c_hat`.
    pub fn feedforward(
        &self,
        vehicle: &Vehicle,
        state: &State,
        current: &Current,
        theta_hat: &ParameterVector,
    ) -> Vec3 {
        match self {
            ResidualModel::CurrentFree => vehicle.current_feedforward(state, current, theta_hat),
            ResidualModel::ConstantCurrent { eta_c_dot } => {
                vehicle.constant_current_mode(state, eta_c_dot, theta_hat).2
            }
        }
    }
}

/// `u = -1/2 R^-1 g' sigma'(zeta)' W_a`.
pub fn policy(vehicle: &Vehicle, weights: &CostWeights, z: &Vec6, w_a: &Vec21) -> Vec3 {
    let grad = sigma_prime(z).transpose() * w_a;
    let gt_grad = vehicle.mass_inverse().transpose() * grad.fixed_rows::<3>(3);
    -0.5 * (weights.r_inv() * gt_grad)
}

/// Bellman error and regressor at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellmanTerm {
    pub delta: f64,
    pub omega: Vec21,
    pub rho: f64,
}

/// Context needed to evaluate the measurable Bellman error.
#[derive(Debug, Clone, Copy)]
pub struct BellmanContext<'a> {
    pub vehicle: &'a Vehicle,
    pub model: ResidualModel,
    pub weights: &'a CostWeights,
}

impl BellmanContext<'_> {
    /// Returns `(delta, omega, u)` with
    /// `omega = sigma'(zeta) (Y_res theta_hat + f_0res + g u)` and
    /// `delta = r(zeta, u) + W_c' omega`.
    pub fn bellman_error(
        &self,
        z: &Vec6,
        theta_hat: &ParameterVector,
        w_c: &Vec21,
        w_a: &Vec21,
    ) -> (f64, Vec21, Vec3) {
        let u = policy(self.vehicle, self.weights, z, w_a);
        let zdot = self.model.drift(self.vehicle, z, theta_hat) + self.vehicle.apply_effectiveness(&u);
        let omega = sigma_prime(z) * zdot;
        let delta = self.weights.local_cost(z, &u) + w_c.dot(&omega);
        (delta, omega, u)
    }

    /// Bellman terms at every extrapolation point, in set order.
    pub fn extrapolate(
        &self,
        set: &ExtrapolationSet,
        theta_hat: &ParameterVector,
        critic: &CriticState,
        w_a: &Vec21,
    ) -> Vec<BellmanTerm> {
        set.points()
            .iter()
            .map(|z| {
                let (delta, omega, _) = self.bellman_error(z, theta_hat, &critic.w, w_a);
                BellmanTerm {
                    delta,
                    omega,
                    rho: critic.rho(&omega),
                }
            })
            .collect()
    }

    /// `tau_b_hat = u_hat + tau_c_hat`.
    pub fn applied_control(
        &self,
        state: &State,
        w_a: &Vec21,
        theta_hat: &ParameterVector,
        current: &Current,
    ) -> Vec3 {
        policy(self.vehicle, self.weights, &state.zeta(), w_a)
            + self.model.feedforward(self.vehicle, state, current, theta_hat)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdpGains {
    pub k_c1: f64,
    pub k_c2: f64,
    pub k_a: f64,
    pub k_rho: f64,
    pub beta: f64,
    /// Initial least-squares gain is `gamma0 * I`.
    pub gamma0: f64,
    pub gamma_bar: f64,
    /// Radius of the actor projection ball.
    pub w_bar: f64,
}

impl Default for AdpGains {
    fn default() -> Self {
        Self {
            k_c1: 0.25,
            k_c2: 0.5,
            k_a: 1.0,
            k_rho: 0.25,
            beta: 0.025,
            gamma0: 400.0,
            gamma_bar: 1e4,
            w_bar: 1e4,
        }
    }
}

impl AdpGains {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.k_c1, "k_c1"),
            (self.k_c2, "k_c2"),
            (self.k_a, "k_a"),
            (self.k_rho, "k_rho"),
            (self.beta, "beta"),
            (self.gamma0, "gamma0"),
            (self.gamma_bar, "gamma_bar"),
            (self.w_bar, "w_bar"),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.gamma0 > self.gamma_bar {
            return Err(Error::InvalidParameter("gamma0 must not exceed gamma_bar".into()));
        }
        Ok(())
    }
}

/// Critic weights with the normalized least-squares gain.
///
/// `Gamma` is propagated through its inverse,
/// `d/dt Gamma^-1 = -beta Gamma^-1 + k_c1 omega omega' / rho`,
/// which keeps it symmetric positive definite under Euler steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticState {
    pub w: Vec21,
    gamma: Mat21,
    gamma_inv: Mat21,
    k_rho: f64,
}

/// What a critic step did to `Gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaUpdate {
    Propagated,
    Saturated,
}

impl CriticState {
    pub fn new(w: Vec21, gains: &AdpGains) -> Self {
        Self {
            w,
            gamma: Mat21::identity() * gains.gamma0,
            gamma_inv: Mat21::identity() / gains.gamma0,
            k_rho: gains.k_rho,
        }
    }

    pub fn with_gamma(w: Vec21, gamma: Mat21, gains: &AdpGains) -> Result<Self> {
        let gamma_inv = Cholesky::new(gamma)
            .ok_or_else(|| Error::NumericalFailure("Gamma is not positive definite".into()))?
            .inverse();
        Ok(Self {
            w,
            gamma,
            gamma_inv,
            k_rho: gains.k_rho,
        })
    }

    pub fn gamma(&self) -> &Mat21 {
        &self.gamma
    }

    /// Spectral norm of `Gamma`.
    pub fn gamma_norm(&self) -> f64 {
        sym_eig_range(&self.gamma).1
    }

    /// `1 + k_rho omega' Gamma omega`.
    pub fn rho(&self, omega: &Vec21) -> f64 {
        1.0 + self.k_rho * omega.dot(&(self.gamma * omega))
    }

    pub fn term(&self, delta: f64, omega: Vec21) -> BellmanTerm {
        BellmanTerm {
            delta,
            omega,
            rho: self.rho(&omega),
        }
    }

    pub fn step(
        &mut self,
        gains: &AdpGains,
        on_policy: &BellmanTerm,
        extrapolated: &[BellmanTerm],
        dt: f64,
    ) -> Result<GammaUpdate> {
        if !(dt > 0.0) {
            return Err(Error::Precondition("dt must be positive".into()));
        }
        if on_policy.rho < 1.0 || extrapolated.iter().any(|t| t.rho < 1.0) {
            return Err(Error::Precondition("normalization rho must be >= 1".into()));
        }
        let mut grad = on_policy.omega * (gains.k_c1 * on_policy.delta / on_policy.rho);
        if !extrapolated.is_empty() {
            let scale = gains.k_c2 / extrapolated.len() as f64;
            for t in extrapolated {
                grad += t.omega * (scale * t.delta / t.rho);
            }
        }
        let w_next = self.w - self.gamma * grad * dt;

        let om = &on_policy.omega;
        let inv_next = symmetrize(
            &(self.gamma_inv * (1.0 - gains.beta * dt)
                + om * om.transpose() * (gains.k_c1 * dt / on_policy.rho)),
        );
        let gamma_next = Cholesky::new(inv_next)
            .ok_or_else(|| Error::NumericalFailure("Gamma lost positive definiteness".into()))?
            .inverse();
        let gamma_next = symmetrize(&gamma_next);
        let update = if sym_eig_range(&gamma_next).1 > gains.gamma_bar {
            GammaUpdate::Saturated
        } else {
            self.gamma = gamma_next;
            self.gamma_inv = inv_next;
            GammaUpdate::Propagated
        };
        if !w_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("critic weights became non-finite".into()));
        }
        self.w = w_next;
        Ok(update)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorState {
    pub w: Vec21,
}

impl ActorState {
    pub fn new(w: Vec21) -> Self {
        Self { w }
    }

    /// Euler step of `proj{-k_a (W_a - W_c)}` onto the ball `|W_a| <= w_bar`.
    ///
    /// On the boundary the outward radial part of the update is removed; any
    /// second-order overshoot from the tangential part is scaled back.
    pub fn step(&mut self, gains: &AdpGains, w_c: &Vec21, dt: f64) {
        let mut d = (self.w - w_c) * (-gains.k_a);
        let n = self.w.norm();
        if n >= gains.w_bar && n > 0.0 {
            let radial = self.w.dot(&d);
            if radial > 0.0 {
                d -= self.w * (radial / (n * n));
            }
        }
        let mut next = self.w + d * dt;
        let nn = next.norm();
        if nn > gains.w_bar {
            next *= gains.w_bar / nn;
        }
        self.w = next;
    }
}

/// Extrapolation states covering the operating box.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationSet {
    points: Vec<Vec6>,
}

const HALTON_BASES: [u64; 6] = [2, 3, 5, 7, 11, 13];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

impl ExtrapolationSet {
    /// `n` Halton points scaled to the box `[-half_width, half_width]`,
    /// starting at sequence index `seed + 1`.
    pub fn halton(half_width: &Vec6, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition("need at least one extrapolation point".into()));
        }
        if half_width.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Precondition("operating box must be non-empty".into()));
        }
        let points = (0..n as u64)
            .map(|k| {
                let idx = seed + k + 1;
                Vec6::from_fn(|d, _| {
                    half_width[d] * (2.0 * radical_inverse(idx, HALTON_BASES[d]) - 1.0)
                })
            })
            .collect();
        Ok(Self { points })
    }

    pub fn from_points(points: Vec<Vec6>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Precondition("need at least one extrapolation point".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec6] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Smallest eigenvalue of `(1/N) sum_k omega_k omega_k' / rho_k`.
pub fn excitation_monitor(terms: &[BellmanTerm]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    let n = terms.len() as f64;
    let sum = terms
        .iter()
        .fold(Mat21::zeros(), |acc, t| acc + t.omega * t.omega.transpose() / t.rho);
    sym_eig_range(&symmetrize(&(sum / n))).0.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ModelKind, VehicleParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn basis_layout() {
        assert_eq!(PAIRS[0], (0, 0));
        assert_eq!(PAIRS[1], (0, 1));
        assert_eq!(PAIRS[6], (1, 1));
        assert_eq!(PAIRS[20], (5, 5));
        assert_eq!(basis_index(3, 1), basis_index(1, 3));
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(&Vec6::zeros()), Vec21::zeros());
        assert_eq!(sigma_prime(&Vec6::zeros()), Mat21x6::zeros());
        let s = sigma(&Vec6::x());
        assert_eq!(s[0], 1.0);
        assert_eq!(s.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn sigma_prime_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let z = Vec6::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let d = sigma_prime(&z);
            let h = 1e-5;
            for c in 0..6 {
                let mut zp = z;
                let mut zm = z;
                zp[c] += h;
                zm[c] -= h;
                let fd = (sigma(&zp) - sigma(&zm)) / (2.0 * h);
                let col = d.column(c);
                assert!((fd - col).norm() <= 1e-7 * col.norm().max(1.0));
            }
        }
    }

    #[test]
    fn local_cost_examples() {
        let w = CostWeights::default();
        assert_eq!(w.local_cost(&Vec6::x(), &Vec3::zeros()), 20.0);
        assert_eq!(w.local_cost(&Vec6::zeros(), &Vec3::zeros()), 0.0);
        assert_eq!(w.local_cost(&Vec6::zeros(), &Vec3::repeat(1.0)), 3.0);
    }

    #[test]
    fn cost_weights_reject_indefinite() {
        let mut q = *CostWeights::default().q();
        q[(0, 0)] = -1.0;
        assert!(CostWeights::new(q, Mat3::identity()).is_err());
        let mut q = *CostWeights::default().q();
        q[(0, 1)] = 1.0;
        assert!(CostWeights::new(q, Mat3::identity()).is_err());
    }

    #[test]
    fn policy_zero_cases() {
        let v = Vehicle::new(VehicleParams::default()).unwrap();
        let w = CostWeights::default();
        let wa = Vec21::from_fn(|i, _| i as f64);
        assert_eq!(policy(&v, &w, &Vec6::repeat(1.0), &Vec21::zeros()), Vec3::zeros());
        assert_eq!(policy(&v, &w, &Vec6::zeros(), &wa), Vec3::zeros());
    }

    #[test]
    fn bellman_zero_at_origin() {
        let v = Vehicle::new(VehicleParams::default()).unwrap();
        let w = CostWeights::default();
        let ctx = BellmanContext { vehicle: &v, model: ResidualModel::CurrentFree, weights: &w };
        let wc = Vec21::repeat(3.0);
        let (d, om, _) = ctx.bellman_error(&Vec6::zeros(), v.true_theta(), &wc, &wc);
        assert_eq!(d, 0.0);
        assert_eq!(om, Vec21::zeros());
    }

    #[test]
    fn bellman_affine_in_critic() {
        let v = Vehicle::new(VehicleParams::default()).unwrap();
        let w = CostWeights::default();
        let ctx = BellmanContext { vehicle: &v, model: ResidualModel::CurrentFree, weights: &w };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Vec6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let wa = Vec21::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let th = ParameterVector(v.true_theta().0 * 0.7);
        let ws: Vec<Vec21> = (0..3)
            .map(|_| Vec21::from_fn(|_, _| rng.random_range(-5.0..5.0)))
            .collect();
        let (d0, om, _) = ctx.bellman_error(&z, &th, &ws[0], &wa);
        for wc in &ws[1..] {
            let (d, om2, _) = ctx.bellman_error(&z, &th, wc, &wa);
            assert_eq!(om, om2);
            assert!((d - d0 - (wc - ws[0]).dot(&om)).abs() < 1e-9 * d0.abs().max(1.0));
        }
    }

    #[test]
    fn critic_zero_error_keeps_weights() {
        let g = AdpGains::default();
        let w = Vec21::from_fn(|i, _| i as f64);
        let mut c = CriticState::new(w, &g);
        let om = Vec21::repeat(0.3);
        let on = c.term(0.0, om);
        let ext = vec![c.term(0.0, om * 2.0); 3];
        c.step(&g, &on, &ext, 0.2).unwrap();
        assert_eq!(c.w, w);
    }

    #[test]
    fn critic_single_point_hand_computation() {
        let g = AdpGains::default();
        let mut c = CriticState::with_gamma(Vec21::zeros(), Mat21::identity(), &g).unwrap();
        let mut om = Vec21::zeros();
        om[0] = 2.0;
        om[4] = -1.0;
        let delta = 0.7;
        let on = c.term(0.0, Vec21::zeros());
        let ext = [c.term(delta, om)];
        let rho = 1.0 + 0.25 * om.norm_squared();
        assert_eq!(ext[0].rho, rho);
        let dt = 0.02;
        c.step(&g, &on, &ext, dt).unwrap();
        let expect = -om * (dt * 0.5 * delta / rho);
        assert!((c.w - expect).norm() < 1e-15);
    }

    #[test]
    fn critic_gamma_saturation_freezes() {
        let g = AdpGains { gamma_bar: 400.0, ..AdpGains::default() };
        let mut c = CriticState::new(Vec21::zeros(), &g);
        let before = *c.gamma();
        let on = c.term(0.0, Vec21::zeros());
        // Forgetting alone would grow Gamma past the bound.
        assert_eq!(c.step(&g, &on, &[], 0.2).unwrap(), GammaUpdate::Saturated);
        assert_eq!(c.gamma(), &before);
    }

    #[test]
    fn critic_gamma_stays_bounded_and_symmetric() {
        let g = AdpGains::default();
        let mut c = CriticState::new(Vec21::zeros(), &g);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let om = Vec21::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let on = c.term(rng.random_range(-1.0..1.0), om);
            c.step(&g, &on, &[], 0.2).unwrap();
            let gm = c.gamma();
            assert!((gm - gm.transpose()).abs().max() <= 1e-12);
            let (lo, hi) = sym_eig_range(gm);
            assert!(lo > 0.0 && hi <= g.gamma_bar);
        }
    }

    #[test]
    fn critic_rejects_bad_rho() {
        let g = AdpGains::default();
        let mut c = CriticState::new(Vec21::zeros(), &g);
        let bad = BellmanTerm { delta: 0.0, omega: Vec21::zeros(), rho: 0.5 };
        assert!(c.step(&g, &bad, &[], 0.1).is_err());
    }

    #[test]
    fn actor_examples() {
        let g = AdpGains::default();
        let wc = Vec21::from_fn(|i, _| i as f64);
        let mut a = ActorState::new(wc);
        a.step(&g, &wc, 0.02);
        assert_eq!(a.w, wc);
        let w0 = Vec21::repeat(1.0);
        let mut a = ActorState::new(w0);
        a.step(&g, &wc, 0.02);
        assert!((a.w - (w0 - (w0 - wc) * 0.02)).norm() < 1e-14);
    }

    #[test]
    fn actor_projection_on_boundary() {
        let g = AdpGains { w_bar: 10.0, ..AdpGains::default() };
        let mut w0 = Vec21::zeros();
        w0[0] = 10.0;
        let mut a = ActorState::new(w0);
        let mut wc = Vec21::zeros();
        wc[0] = 50.0;
        wc[1] = 30.0;
        for _ in 0..100 {
            a.step(&g, &wc, 0.1);
            assert!(a.w.norm() <= 10.0 * (1.0 + 1e-15));
        }
        // Tangential motion is still allowed.
        assert!(a.w[1] > 0.0);
    }

    #[test]
    fn halton_set_properties() {
        let b = Vec6::new(5.0, 5.0, 3.0, 1.0, 1.0, 1.0);
        let one = ExtrapolationSet::halton(&b, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        let big = ExtrapolationSet::halton(&b, 10_000, 0).unwrap();
        assert!(big
            .points()
            .iter()
            .all(|p| p.iter().zip(b.iter()).all(|(x, h)| x.abs() <= *h)));
        assert_eq!(big, ExtrapolationSet::halton(&b, 10_000, 0).unwrap());
        assert_ne!(
            ExtrapolationSet::halton(&b, 4, 0).unwrap(),
            ExtrapolationSet::halton(&b, 4, 9).unwrap()
        );
        assert!(ExtrapolationSet::halton(&b, 0, 0).is_err());
    }

    #[test]
    fn excitation_monitor_cases() {
        let v = Vehicle::new(VehicleParams::default()).unwrap();
        let w = CostWeights::default();
        let ctx = BellmanContext { vehicle: &v, model: ResidualModel::CurrentFree, weights: &w };
        let g = AdpGains::default();
        let wa = Vec21::from_fn(|k, _| if PAIRS[k].0 == PAIRS[k].1 { 50.0 } else { 5.0 });
        let critic = CriticState::new(wa, &g);
        let b = Vec6::new(5.0, 5.0, 3.0, 1.0, 1.0, 1.0);
        let th = ParameterVector(v.true_theta().0 * 0.5);
        let one = ExtrapolationSet::halton(&b, 1, 0).unwrap();
        assert!(excitation_monitor(&ctx.extrapolate(&one, &th, &critic, &wa)) < 1e-12);
        let rich = ExtrapolationSet::halton(&b, 64, 0).unwrap();
        let lam = excitation_monitor(&ctx.extrapolate(&rich, &th, &critic, &wa));
        assert!(lam > 0.0, "{lam}");
        let big = CriticState::with_gamma(wa, Mat21::identity() * 4000.0, &g).unwrap();
        let lam_big = excitation_monitor(&ctx.extrapolate(&rich, &th, &big, &wa));
        assert!(lam_big >= 0.0 && lam_big <= lam);
    }

    #[test]
    fn applied_control_is_sum() {
        let v = Vehicle::new(VehicleParams::default()).unwrap();
        let w = CostWeights::default();
        let ctx = BellmanContext { vehicle: &v, model: ResidualModel::CurrentFree, weights: &w };
        let s = State::from_zeta(&Vec6::new(1.0, -1.0, 0.3, 0.2, 0.1, 0.0));
        let c = Current::new(0.2, 0.1, 0.01, 0.0);
        let th = *v.true_theta();
        assert_eq!(ctx.applied_control(&s, &Vec21::zeros(), &th, &Current::none()), Vec3::zeros());
        let wa = Vec21::repeat(2.0);
        let tau = ctx.applied_control(&s, &wa, &th, &c);
        let parts = policy(&v, &w, &s.zeta(), &wa) + v.current_feedforward(&s, &c, &th);
        assert_eq!(tau, parts);
    }

    #[test]
    fn constant_current_applied_control_holds_station() {
        let v = Vehicle::new(VehicleParams::default()).unwrap();
        let w = CostWeights::default();
        let ec = Vec2::new(0.25, 0.1);
        let ctx = BellmanContext {
            vehicle: &v,
            model: ResidualModel::ConstantCurrent { eta_c_dot: ec },
            weights: &w,
        };
        let s = State::zero();
        let cur = v.body_current_from_earth(&s, &ec);
        let tau = ctx.applied_control(&s, &Vec21::repeat(7.0), v.true_theta(), &cur);
        assert!(v.plant_derivative(&s, &cur, &tau).norm() <= 1e-10);
    }

    #[test]
    fn rho_at_least_one() {
        let g = AdpGains::default();
        let c = CriticState::new(Vec21::zeros(), &g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let om = Vec21::from_fn(|_, _| rng.random_range(-10.0..10.0));
            assert!(c.rho(&om) >= 1.0);
        }
        let _ = ModelKind::Linear;
    }
}
