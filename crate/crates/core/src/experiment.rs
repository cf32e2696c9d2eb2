//! The `collect -> run` pipeline and the oracle/check diagnostics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::adp::{
    excitation_monitor, ActorState, AdpGains, BellmanContext, CostWeights, CriticState,
    ExtrapolationSet, ResidualModel,
};
use crate::config::{ExperimentConfig, Mode};
use crate::dynamics::{ModelKind, ParameterVector, State, Vehicle};
use crate::error::{Error, Result};
use crate::linalg::{sym_eig_range, wrap_angle, Mat6, Mat8, Vec21, Vec3, Vec6};
use crate::report::RunReport;
use crate::riccati::{closed_loop_eigenvalues, linearize, solve_are, LinearModel, RiccatiSolution};
use crate::sim::{self, ControlOutput, CurrentField, Diagnostics, Measurement, Plant, SimConfig, Trajectory};
use crate::sysid::{
    convergence_diagnostics, smooth_derivative, state_error, HistoryStack, IdentifierState,
    StackEntry,
};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.json";

/// Vehicle model used by the plant and the controller in a given mode.
pub fn vehicle_for(cfg: &ExperimentConfig) -> Result<Vehicle> {
    let kind = match cfg.mode {
        Mode::LinearTest => ModelKind::Linear,
        _ => ModelKind::Nonlinear,
    };
    Vehicle::with_kind(cfg.vehicle.clone(), kind)
}

/// Parameter estimate at the start of a run: exact in the linear test,
/// zero otherwise.
pub fn initial_theta(cfg: &ExperimentConfig) -> ParameterVector {
    match cfg.mode {
        Mode::LinearTest => cfg.vehicle.theta,
        _ => ParameterVector::zeros(),
    }
}

pub fn residual_model(cfg: &ExperimentConfig) -> ResidualModel {
    match cfg.mode {
        Mode::ConstantCurrent => ResidualModel::ConstantCurrent {
            eta_c_dot: cfg.constant_current(),
        },
        _ => ResidualModel::CurrentFree,
    }
}

/// Linearization of the plant about the station and its Riccati solution,
/// which seed the critic and actor weights.
pub fn design(cfg: &ExperimentConfig) -> Result<(LinearModel, RiccatiSolution)> {
    let model = match residual_model(cfg) {
        ResidualModel::CurrentFree => linearize(&cfg.vehicle, &cfg.vehicle.theta)?,
        rm => {
            let vehicle = Vehicle::new(cfg.vehicle.clone())?;
            let mut model = linearize(&cfg.vehicle, &cfg.vehicle.theta)?;
            model.a = numeric_jacobian(|z| rm.drift(&vehicle, z, &cfg.vehicle.theta));
            model
        }
    };
    let sol = solve_are(&model, &cfg.cost)?;
    Ok((model, sol))
}

/// Central-difference Jacobian at the origin.
fn numeric_jacobian(f: impl Fn(&Vec6) -> Vec6) -> Mat6 {
    let h = 1e-6;
    let mut a = Mat6::zeros();
    for j in 0..6 {
        let mut e = Vec6::zeros();
        e[j] = h;
        a.set_column(j, &((f(&e) - f(&(-e))) / (2.0 * h)));
    }
    a
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleOutput {
    pub mode: String,
    pub theta: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub are_residual: f64,
    /// Closed-loop eigenvalues as `[re, im]`.
    pub closed_loop_eigenvalues: Vec<[f64; 2]>,
}

fn rows<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> Vec<Vec<f64>> {
    (0..R).map(|i| (0..C).map(|j| m[(i, j)]).collect()).collect()
}

pub fn oracle(cfg: &ExperimentConfig) -> Result<OracleOutput> {
    cfg.validate()?;
    let (model, sol) = design(cfg)?;
    let acl = model.a - model.b * sol.k;
    Ok(OracleOutput {
        mode: cfg.mode.to_string(),
        theta: cfg.vehicle.theta.0.iter().copied().collect(),
        p: rows(&sol.p),
        k: rows(&sol.k),
        weights: sol.weights().iter().copied().collect(),
        are_residual: sol.residual(&model, &cfg.cost),
        closed_loop_eigenvalues: closed_loop_eigenvalues(&acl)
            .iter()
            .map(|e| [e.re, e.im])
            .collect(),
    })
}

/// Multi-sine pose reference for data collection.
#[derive(Debug, Clone, Copy)]
pub struct MultiSine {
    scale: f64,
}

/// Per axis: (amplitude, angular frequency, phase) of each component.
const REFERENCE: [[(f64, f64, f64); 2]; 3] = [
    [(1.5, 0.31, 0.0), (0.8, 0.73, 1.0)],
    [(1.5, 0.23, 0.5), (0.8, 0.89, 2.0)],
    [(0.8, 0.41, 1.5), (0.4, 1.13, 0.0)],
];

impl MultiSine {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }

    /// Pose, pose rate and pose acceleration at `t`.
    pub fn eval(&self, t: f64) -> (Vec3, Vec3, Vec3) {
        let mut p = Vec3::zeros();
        let mut v = Vec3::zeros();
        let mut a = Vec3::zeros();
        for (axis, comps) in REFERENCE.iter().enumerate() {
            for &(amp, w, phi) in comps {
                let (s, c) = (w * t + phi).sin_cos();
                p[axis] += self.scale * amp * s;
                v[axis] += self.scale * amp * w * c;
                a[axis] -= self.scale * amp * w * w * s;
            }
        }
        (p, v, a)
    }
}

/// Body-frame PD force tracking a pose reference.
pub fn pd_tracking(state: &State, reference: (Vec3, Vec3), kp: &Vec3, kd: &Vec3) -> Vec3 {
    let (pd, vd) = reference;
    let (s, c) = state.pose.psi.sin_cos();
    let to_body = |e: &Vec3| Vec3::new(c * e[0] + s * e[1], -s * e[0] + c * e[1], e[2]);
    let mut e = pd - Vec3::new(state.pose.x, state.pose.y, state.pose.psi);
    e[2] = wrap_angle(e[2]);
    kp.component_mul(&to_body(&e)) + kd.component_mul(&(to_body(&vd) - state.nu()))
}

/// Drives the current-free plant along the exciting reference and builds the
/// history stack from smoothed derivatives of the measured state.
pub fn collect(cfg: &ExperimentConfig) -> Result<HistoryStack> {
    cfg.validate()?;
    let vehicle = Vehicle::new(cfg.vehicle.clone())?;
    let plant = Plant::new(vehicle.clone(), CurrentField::none());
    let sim_cfg = SimConfig {
        dt: cfg.sim.dt,
        duration: cfg.collection.duration,
        seed: cfg.sim.seed,
        noise: cfg.sim.noise,
        initial_state: Vec6::zeros(),
    };
    let reference = MultiSine::new(cfg.collection.amplitude);
    let mut measured: Vec<Measurement> = Vec::with_capacity(sim_cfg.steps() + 1);
    let traj = sim::run(&plant, &sim_cfg, |_, t, m| {
        measured.push(*m);
        let (p, v, _) = reference.eval(t);
        Ok(ControlOutput::force(pd_tracking(
            &m.state,
            (p, v),
            &cfg.collection.kp,
            &cfg.collection.kd,
        )))
    })?;

    let dt = cfg.sim.dt;
    let half = ((cfg.smoother.half_window / dt).round() as usize).max(1);
    let every = ((cfg.collection.candidate_spacing / dt).round() as usize).max(1);
    let n = traj.samples.len();
    let mut stack = HistoryStack::new(cfg.stack_capacity);
    let mut k = half;
    while k + half < n {
        let window: Vec<(f64, Vec6)> = (k - half..=k + half)
            .map(|i| (traj.samples[i].t, measured[i].state.zeta()))
            .collect();
        let sample = &traj.samples[k];
        let d = smooth_derivative(&window, sample.t, cfg.smoother.order)?;
        // The held input switches at each sample, so the smoothed derivative
        // sits between the one-sided ones; the dynamics are affine in tau.
        let tau = 0.5 * (traj.samples[k - 1].tau + sample.tau);
        stack.insert(StackEntry::new(
            &vehicle,
            sample.t,
            measured[k].state,
            measured[k].current,
            tau,
            d.derivative,
        ));
        k += every;
    }
    let (ok, y_min) = stack.rank_condition();
    if !ok || !stack.is_full() {
        return Err(Error::CollectionFailure { y_min });
    }
    Ok(stack)
}

/// Closed-loop station-keeping controller: identifier, critic and actor.
pub struct StationController {
    vehicle: Vehicle,
    model: ResidualModel,
    weights: CostWeights,
    gains: AdpGains,
    pub critic: CriticState,
    pub actor: ActorState,
    set: ExtrapolationSet,
    identifier: IdentifierState,
    adapt_parameters: bool,
    stack: HistoryStack,
    theta_true: ParameterVector,
    w_ref: Vec21,
    dt: f64,
    period: usize,
    last: Diagnostics,
}

impl StationController {
    pub fn new(cfg: &ExperimentConfig, stack: HistoryStack) -> Result<Self> {
        cfg.validate()?;
        let vehicle = vehicle_for(cfg)?;
        let adapt = cfg.mode != Mode::LinearTest;
        if adapt {
            let (ok, y_min) = stack.rank_condition();
            if !ok {
                return Err(Error::RankDeficient { y_min });
            }
        }
        let (_, sol) = design(cfg)?;
        let w_ref = sol.weights();
        let mut w0 = w_ref;
        if cfg.critic_perturbation > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
            let d = Vec21::from_fn(|_, _| StandardNormal.sample(&mut rng));
            w0 += d * (cfg.critic_perturbation * w_ref.norm() / d.norm());
        }
        if w0.norm() > cfg.adp.w_bar {
            return Err(Error::Precondition(format!(
                "initial weights |W| = {:.3e} exceed the actor bound {:.3e}",
                w0.norm(),
                cfg.adp.w_bar
            )));
        }
        let set = ExtrapolationSet::halton(
            &cfg.extrapolation.half_width,
            cfg.extrapolation.points,
            cfg.sim.seed,
        )?;
        let identifier = IdentifierState::new(
            cfg.sim.initial_state,
            initial_theta(cfg),
            cfg.identifier.clone(),
        );
        Ok(Self {
            theta_true: *vehicle.true_theta(),
            vehicle,
            model: residual_model(cfg),
            weights: cfg.cost.clone(),
            gains: cfg.adp.clone(),
            critic: CriticState::new(w0, &cfg.adp),
            actor: ActorState::new(w0),
            set,
            identifier,
            adapt_parameters: adapt,
            stack,
            w_ref,
            dt: cfg.sim.dt,
            period: cfg.critic_period,
            last: Diagnostics::default(),
        })
    }

    pub fn theta_hat(&self) -> &ParameterVector {
        &self.identifier.theta_hat
    }

    pub fn reference_weights(&self) -> &Vec21 {
        &self.w_ref
    }

    fn context(&self) -> BellmanContext<'_> {
        BellmanContext {
            vehicle: &self.vehicle,
            model: self.model,
            weights: &self.weights,
        }
    }

    pub fn step(&mut self, k: usize, meas: &Measurement) -> Result<ControlOutput> {
        let theta_hat = self.identifier.theta_hat;
        let zeta = meas.state.zeta();
        let ctx = self.context();
        let tau = ctx.applied_control(&meas.state, &self.actor.w, &theta_hat, &meas.current);
        let (delta, omega, _) = ctx.bellman_error(&zeta, &theta_hat, &self.critic.w, &self.actor.w);

        let mut diag = self.last;
        diag.delta = delta;
        if k.is_multiple_of(self.period) {
            let ext = ctx.extrapolate(&self.set, &theta_hat, &self.critic, &self.actor.w);
            let n = ext.len() as f64;
            diag.delta_k_rms = (ext.iter().map(|t| t.delta * t.delta).sum::<f64>() / n).sqrt();
            diag.delta_k_max = ext.iter().map(|t| t.delta.abs()).fold(0.0, f64::max);
            diag.lambda_min = excitation_monitor(&ext);
            let on = self.critic.term(delta, omega);
            self.critic
                .step(&self.gains, &on, &ext, self.dt * self.period as f64)?;
            diag.gamma_norm = self.critic.gamma_norm();
        }
        self.actor.step(&self.gains, &self.critic.w, self.dt);
        diag.wc_wa_diff = (self.critic.w - self.actor.w).norm();
        diag.wa_norm = self.actor.w.norm();
        diag.wc_ref_err = (self.critic.w - self.w_ref).norm() / self.w_ref.norm();

        diag.zeta_err = state_error(&zeta, &self.identifier.zeta_hat).norm();
        diag.theta_err = (self.theta_true.0 - theta_hat.0).norm() / self.theta_true.0.norm();
        if self.adapt_parameters {
            self.identifier
                .step(&self.vehicle, &self.stack, &meas.state, &meas.current, &tau, self.dt)
                .map_err(|e| match e {
                    Error::IdentifierDivergence { .. } => Error::IdentifierDivergence { step: k },
                    other => other,
                })?;
        } else {
            self.identifier.zeta_hat = zeta;
        }
        self.last = diag;
        Ok(ControlOutput { tau, diag })
    }
}

/// Runs the closed-loop experiment in memory.
pub fn run_experiment(cfg: &ExperimentConfig, stack: &HistoryStack) -> Result<Trajectory> {
    let mut ctrl = StationController::new(cfg, stack.clone())?;
    let plant = Plant::new(vehicle_for(cfg)?, cfg.current_field());
    sim::run(&plant, &cfg.sim, |k, _, m| ctrl.step(k, m))
}

/// Runs the experiment, writes the trajectory CSV and a report computed from
/// the file as written.
pub fn run_and_save(cfg: &ExperimentConfig, stack: &HistoryStack, out_dir: &Path) -> Result<RunReport> {
    let start = std::time::Instant::now();
    let traj = run_experiment(cfg, stack)?;
    std::fs::create_dir_all(out_dir)?;
    let traj_path = out_dir.join(TRAJECTORY_FILE);
    traj.save_csv(&traj_path)?;
    let elapsed = start.elapsed().as_secs_f64();
    let report = RunReport::from_trajectory(&Trajectory::load_csv(&traj_path)?, elapsed);
    report.save_json(&out_dir.join(REPORT_FILE))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub stack_len: usize,
    pub stack_capacity: usize,
    pub rank_condition: bool,
    pub y_min: f64,
    pub sigma_min: f64,
    pub alpha_p: f64,
    pub k_p: f64,
    pub d_theta: f64,
    /// Slowest and fastest rates of the stack-driven parameter dynamics.
    pub identifier_rate_min: f64,
    pub identifier_rate_max: f64,
    /// `dt` times the fastest rate; the Euler update needs this below 2.
    pub identifier_euler_margin: f64,
    pub are_residual: f64,
    pub closed_loop_max_real: f64,
    pub initial_weight_norm: f64,
    pub w_bar: f64,
    pub gamma0: f64,
    pub gamma_bar: f64,
    pub initial_lambda_min: f64,
}

impl CheckReport {
    /// Human-readable problems, empty when everything checks out.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !self.rank_condition {
            p.push(format!("stack rank condition fails (y_min = {:e})", self.y_min));
        }
        if self.identifier_euler_margin >= 2.0 {
            p.push(format!(
                "identifier Euler step unstable (dt * rate_max = {:.3})",
                self.identifier_euler_margin
            ));
        }
        if self.closed_loop_max_real >= 0.0 {
            p.push("ARE closed loop is not stable".into());
        }
        if self.initial_weight_norm > self.w_bar {
            p.push("initial weights exceed the actor bound".into());
        }
        if self.gamma0 > self.gamma_bar {
            p.push("initial critic gain exceeds its saturation bound".into());
        }
        if !(self.initial_lambda_min > 0.0) {
            p.push("extrapolation set is not exciting (lambda_min = 0)".into());
        }
        p
    }
}

pub fn check(cfg: &ExperimentConfig, stack: &HistoryStack) -> Result<CheckReport> {
    cfg.validate()?;
    let (ok, y_min) = stack.rank_condition();
    let diag = if ok {
        Some(convergence_diagnostics(&cfg.identifier, stack, cfg.derivative_bound)?)
    } else {
        None
    };
    let (rate_min, rate_max) = identifier_rate_range(cfg, stack);
    let (model, sol) = design(cfg)?;
    let acl = model.a - model.b * sol.k;
    let w = sol.weights();
    let vehicle = vehicle_for(cfg)?;
    let set = ExtrapolationSet::halton(&cfg.extrapolation.half_width, cfg.extrapolation.points, cfg.sim.seed)?;
    let critic = CriticState::new(w, &cfg.adp);
    let ctx = BellmanContext {
        vehicle: &vehicle,
        model: residual_model(cfg),
        weights: &cfg.cost,
    };
    let lam = excitation_monitor(&ctx.extrapolate(&set, &initial_theta(cfg), &critic, &w));
    Ok(CheckReport {
        stack_len: stack.len(),
        stack_capacity: stack.capacity(),
        rank_condition: ok,
        y_min,
        sigma_min: stack.sigma_min(),
        alpha_p: diag.map_or(0.0, |d| d.alpha_p),
        k_p: diag.map_or(f64::INFINITY, |d| d.k_p),
        d_theta: stack.d_theta(cfg.derivative_bound),
        identifier_rate_min: rate_min,
        identifier_rate_max: rate_max,
        identifier_euler_margin: rate_max * cfg.sim.dt,
        are_residual: sol.residual(&model, &cfg.cost),
        closed_loop_max_real: closed_loop_eigenvalues(&acl)
            .iter()
            .map(|e| e.re)
            .fold(f64::NEG_INFINITY, f64::max),
        initial_weight_norm: w.norm(),
        w_bar: cfg.adp.w_bar,
        gamma0: cfg.adp.gamma0,
        gamma_bar: cfg.adp.gamma_bar,
        initial_lambda_min: lam,
    })
}

/// Eigenvalue range of `k_theta Gamma_theta sum_j Y_j' Y_j`, the rates of the
/// stack-driven parameter error dynamics.
pub fn identifier_rate_range(cfg: &ExperimentConfig, stack: &HistoryStack) -> (f64, f64) {
    let g = Mat8::from_diagonal(&cfg.identifier.gamma_theta.map(f64::sqrt));
    sym_eig_range(&(g * stack.gram() * g * cfg.identifier.k_theta))
}
