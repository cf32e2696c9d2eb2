//! Concurrent-learning system identifier.
//!
//! A state observer runs on the instantaneous model error while the parameter
//! update also fits a recorded history stack of `(state, current, force,
//! smoothed derivative)` tuples. The stack supplies the excitation that the
//! station-keeping trajectory itself lacks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{Current, ParameterVector, State, Vehicle};
use crate::error::{Error, Result};
use crate::linalg::{is_finite, spectral_norm, sym_eig_range, wrap_angle, Mat8, Mat68, Vec3, Vec6, Vec8};

/// Relative eigenvalue cutoff used for the rank test.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierGains {
    /// Diagonal of the observer gain.
    pub k_zeta: Vec6,
    pub k_theta: f64,
    /// Diagonal of the parameter adaptation gain.
    pub gamma_theta: Vec8,
}

impl Default for IdentifierGains {
    fn default() -> Self {
        Self {
            k_zeta: Vec6::repeat(25.0),
            k_theta: 12.5,
            gamma_theta: Vec8::from_column_slice(&[
                187.5, 937.5, 37.5, 37.5, 37.5, 37.5, 37.5, 37.5,
            ]),
        }
    }
}

impl IdentifierGains {
    pub fn validate(&self) -> Result<()> {
        if self.k_zeta.iter().any(|&k| !(k > 0.0))
            || !(self.k_theta > 0.0)
            || self.gamma_theta.iter().any(|&g| !(g > 0.0))
        {
            return Err(Error::InvalidParameter(
                "identifier gains must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// State-space difference with the yaw component wrapped.
pub fn state_error(measured: &Vec6, estimate: &Vec6) -> Vec6 {
    let mut e = measured - estimate;
    e[2] = wrap_angle(e[2]);
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifierState {
    pub zeta_hat: Vec6,
    pub theta_hat: ParameterVector,
    pub gains: IdentifierGains,
}

impl IdentifierState {
    pub fn new(zeta_hat: Vec6, theta_hat: ParameterVector, gains: IdentifierGains) -> Self {
        Self {
            zeta_hat,
            theta_hat,
            gains,
        }
    }

    pub fn zeta_error(&self, zeta: &State) -> Vec6 {
        state_error(&zeta.zeta(), &self.zeta_hat)
    }

    /// Observer rate `Y theta_hat + f_0 + g tau + k_zeta zeta_tilde`.
    pub fn observer_rate(&self, vehicle: &Vehicle, zeta: &State, current: &Current, tau: &Vec3) -> Vec6 {
        let err = self.zeta_error(zeta);
        vehicle.regressor_full(zeta, current) * self.theta_hat.0
            + vehicle.drift_known(zeta, &current.nu_c_dot())
            + vehicle.apply_effectiveness(tau)
            + self.gains.k_zeta.component_mul(&err)
    }

    /// Parameter rate: instantaneous prediction error plus the stack fit.
    pub fn parameter_rate(
        &self,
        vehicle: &Vehicle,
        stack: &HistoryStack,
        zeta: &State,
        current: &Current,
    ) -> Vec8 {
        let err = self.zeta_error(zeta);
        let y = vehicle.regressor_full(zeta, current);
        let fit = stack.fit_residual(&self.theta_hat);
        self.gains
            .gamma_theta
            .component_mul(&(y.transpose() * err + fit * self.gains.k_theta))
    }

    /// Euler step of the observer alone; returns the new estimate.
    pub fn observer_step(
        &self,
        vehicle: &Vehicle,
        zeta: &State,
        current: &Current,
        tau: &Vec3,
        dt: f64,
    ) -> Result<Vec6> {
        check_dt(dt)?;
        let next = self.zeta_hat + self.observer_rate(vehicle, zeta, current, tau) * dt;
        if !is_finite(&next) {
            return Err(Error::IdentifierDivergence { step: 0 });
        }
        Ok(next)
    }

    /// Euler step of the parameter law alone; returns the new estimate.
    pub fn parameter_step(
        &self,
        vehicle: &Vehicle,
        stack: &HistoryStack,
        zeta: &State,
        current: &Current,
        dt: f64,
    ) -> Result<ParameterVector> {
        check_dt(dt)?;
        if stack.is_empty() {
            return Err(Error::Precondition("parameter update needs a non-empty stack".into()));
        }
        let next = self.theta_hat.0 + self.parameter_rate(vehicle, stack, zeta, current) * dt;
        if !is_finite(&next) {
            return Err(Error::IdentifierDivergence { step: 0 });
        }
        Ok(ParameterVector(next))
    }

    /// Advances observer and parameters together from the same error.
    pub fn step(
        &mut self,
        vehicle: &Vehicle,
        stack: &HistoryStack,
        zeta: &State,
        current: &Current,
        tau: &Vec3,
        dt: f64,
    ) -> Result<()> {
        let zeta_hat = self.observer_step(vehicle, zeta, current, tau, dt)?;
        let theta_hat = self.parameter_step(vehicle, stack, zeta, current, dt)?;
        self.zeta_hat = zeta_hat;
        self.theta_hat = theta_hat;
        Ok(())
    }

    /// `V_P = 1/2 |zeta_tilde|^2 + 1/2 theta_tilde' Gamma_theta^-1 theta_tilde`.
    pub fn lyapunov(&self, zeta_tilde: &Vec6, theta_tilde: &Vec8) -> f64 {
        0.5 * zeta_tilde.norm_squared()
            + 0.5 * theta_tilde
                .iter()
                .zip(self.gains.gamma_theta.iter())
                .map(|(t, g)| t * t / g)
                .sum::<f64>()
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 {
        Ok(())
    } else {
        Err(Error::Precondition("dt must be positive".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    /// Half-width of the fitting window, seconds.
    pub half_window: f64,
    /// Degree of the local polynomial.
    pub order: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            half_window: 0.25,
            order: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedDerivative {
    pub derivative: Vec6,
    /// Three-sigma bound on the derivative error, from the fit residual.
    pub error_bound: f64,
}

/// Non-causal derivative estimate at `t_target` from a local least-squares
/// polynomial fit of each state component over `window`.
///
/// The yaw channel is unwrapped across the window before fitting.
pub fn smooth_derivative(
    window: &[(f64, Vec6)],
    t_target: f64,
    order: usize,
) -> Result<SmoothedDerivative> {
    let n = window.len();
    let p = order + 1;
    if n < 5 || n < p + 1 {
        return Err(Error::Precondition(format!(
            "smoothing window has {n} samples, need at least {}",
            (p + 1).max(5)
        )));
    }
    let (t_first, t_last) = (window[0].0, window[n - 1].0);
    if !(t_first < t_target && t_target < t_last) {
        return Err(Error::Precondition(
            "derivative target must lie strictly inside the window".into(),
        ));
    }
    let scale = window
        .iter()
        .map(|(t, _)| (t - t_target).abs())
        .fold(0.0, f64::max);
    let x = DMatrix::from_fn(n, p, |i, j| ((window[i].0 - t_target) / scale).powi(j as i32));
    let svd = x.clone().svd(true, true);

    // Unwrap yaw relative to the first sample.
    let mut psi = Vec::with_capacity(n);
    let mut prev = window[0].1[2];
    let mut acc = prev;
    for (_, z) in window {
        acc += wrap_angle(z[2] - prev);
        prev = z[2];
        psi.push(acc);
    }

    let xtx_inv = (x.transpose() * &x)
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure("degenerate smoothing window".into()))?;
    let var_factor = xtx_inv[(1, 1)] / (scale * scale);
    let dof = (n - p).max(1) as f64;

    let mut derivative = Vec6::zeros();
    let mut var_sum = 0.0;
    for c in 0..6 {
        let y = DVector::from_fn(n, |i, _| if c == 2 { psi[i] } else { window[i].1[c] });
        let coef = svd
            .solve(&y, 1e-14)
            .map_err(|e| Error::NumericalFailure(e.to_string()))?;
        derivative[c] = coef[1] / scale;
        let resid = &y - &x * &coef;
        var_sum += resid.norm_squared() / dof * var_factor;
    }
    Ok(SmoothedDerivative {
        derivative,
        error_bound: 3.0 * var_sum.sqrt(),
    })
}

/// One recorded data point with its regressor and known terms precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct StackEntry {
    pub t: f64,
    pub state: State,
    pub current: Current,
    pub tau: Vec3,
    pub zeta_dot_bar: Vec6,
    pub y: Mat68,
    known: Vec6,
}

impl StackEntry {
    pub fn new(
        vehicle: &Vehicle,
        t: f64,
        state: State,
        current: Current,
        tau: Vec3,
        zeta_dot_bar: Vec6,
    ) -> Self {
        let y = vehicle.regressor_full(&state, &current);
        let known = vehicle.drift_known(&state, &current.nu_c_dot()) + vehicle.apply_effectiveness(&tau);
        Self {
            t,
            state,
            current,
            tau,
            zeta_dot_bar,
            y,
            known,
        }
    }

    /// Same data point with a different recorded derivative.
    pub fn with_derivative(&self, zeta_dot_bar: Vec6) -> Self {
        Self {
            zeta_dot_bar,
            ..self.clone()
        }
    }

    /// `zeta_dot_bar - f_0 - g tau`: the part of the derivative explained by theta.
    pub fn target(&self) -> Vec6 {
        self.zeta_dot_bar - self.known
    }

    fn gram(&self) -> Mat8 {
        self.y.transpose() * self.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryStack {
    capacity: usize,
    entries: Vec<StackEntry>,
}

impl HistoryStack {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> &[StackEntry] {
        &self.entries
    }

    /// Replaces every recorded derivative, keeping states and regressors.
    pub fn map_derivatives<F: FnMut(usize, &StackEntry) -> Vec6>(&self, mut f: F) -> Self {
        Self {
            capacity: self.capacity,
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| e.with_derivative(f(i, e)))
                .collect(),
        }
    }

    /// `sum_j Y_j' Y_j`.
    pub fn gram(&self) -> Mat8 {
        self.entries.iter().fold(Mat8::zeros(), |acc, e| acc + e.gram())
    }

    /// `sum_j Y_j' (zeta_dot_bar_j - f_0j - g tau_j - Y_j theta_hat)`.
    pub fn fit_residual(&self, theta_hat: &ParameterVector) -> Vec8 {
        self.entries.iter().fold(Vec8::zeros(), |acc, e| {
            acc + e.y.transpose() * (e.target() - e.y * theta_hat.0)
        })
    }

    /// Minimum singular value of the vertically stacked regressors.
    pub fn sigma_min(&self) -> f64 {
        sym_eig_range(&self.gram()).0.max(0.0).sqrt()
    }

    /// Appends while there is room; once full, swaps in the candidate at the
    /// slot that maximizes the minimum singular value, if that beats the
    /// current value. Returns whether the candidate was kept.
    pub fn insert(&mut self, candidate: StackEntry) -> bool {
        if !is_finite(&candidate.y) {
            return false;
        }
        if !self.is_full() {
            self.entries.push(candidate);
            return true;
        }
        let gram = self.gram();
        let current = sym_eig_range(&gram).0;
        let cand = candidate.gram();
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let lam = sym_eig_range(&(gram - e.gram() + cand)).0;
            if best.is_none_or(|(_, b)| lam > b) {
                best = Some((i, lam));
            }
        }
        match best {
            Some((i, lam)) if lam > current + 1e-12 * current.abs().max(f64::MIN_POSITIVE) => {
                self.entries[i] = candidate;
                true
            }
            _ => false,
        }
    }

    /// Whether `sum_j Y_j' Y_j` has full rank, and its smallest eigenvalue.
    pub fn rank_condition(&self) -> (bool, f64) {
        let (lo, hi) = sym_eig_range(&self.gram());
        (hi > 0.0 && lo > RANK_TOL * hi, lo)
    }

    /// `d_theta = d_bar sum_j |Y_j|`, with the induced 2-norm.
    pub fn d_theta(&self, d_bar: f64) -> f64 {
        d_bar * self.entries.iter().map(|e| spectral_norm(&e.y)).sum::<f64>()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(STACK_HEADER)?;
        for e in &self.entries {
            let mut row = vec![e.t.to_string()];
            row.extend(e.state.zeta().iter().map(|v| v.to_string()));
            row.extend(e.current.nu_c().iter().map(|v| v.to_string()));
            row.extend(e.current.nu_c_dot().iter().map(|v| v.to_string()));
            row.extend(e.tau.iter().map(|v| v.to_string()));
            row.extend(e.zeta_dot_bar.iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a stack, recomputes every regressor with `vehicle`, and rejects
    /// stacks that fail the rank condition.
    pub fn read_csv<R: std::io::Read>(r: R, vehicle: &Vehicle, capacity: usize) -> Result<Self> {
        let fmt = |msg: String| Error::Format {
            path: "<stack>".into(),
            msg,
        };
        let mut rd = csv::Reader::from_reader(r);
        if rd.headers()?.iter().ne(STACK_HEADER.iter().copied()) {
            return Err(fmt("unexpected history stack header".into()));
        }
        let mut entries = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fmt(format!("row {}: {e}", row + 1)))?;
            if v.len() != STACK_HEADER.len() || v.iter().any(|x| !x.is_finite()) {
                return Err(fmt(format!("row {}: malformed entry", row + 1)));
            }
            if v[9] != 0.0 || v[12] != 0.0 {
                return Err(fmt(format!("row {}: current must be irrotational", row + 1)));
            }
            let state = State::from_zeta(&Vec6::from_column_slice(&v[1..7]));
            let current = Current::new(v[7], v[8], v[10], v[11]);
            entries.push(StackEntry::new(
                vehicle,
                v[0],
                state,
                current,
                Vec3::from_column_slice(&v[13..16]),
                Vec6::from_column_slice(&v[16..22]),
            ));
        }
        let stack = Self {
            capacity: capacity.max(entries.len()),
            entries,
        };
        let (ok, y_min) = stack.rank_condition();
        if !ok {
            return Err(Error::RankDeficient { y_min });
        }
        Ok(stack)
    }

    pub fn load_csv(path: &Path, vehicle: &Vehicle, capacity: usize) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f), vehicle, capacity).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format {
                path: path.to_owned(),
                msg,
            },
            other => other,
        })
    }
}

pub const STACK_HEADER: [&str; 22] = [
    "t", "x", "y", "psi", "u", "v", "r", "uc", "vc", "rc", "ucdot", "vcdot", "rcdot", "tau1",
    "tau2", "tau3", "xdot", "ydot", "psidot", "udot", "vdot", "rdot",
];

/// Ultimate-bound constants of the identifier error system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceDiagnostics {
    /// Decay rate `1/2 min{2 k_zeta_min, k_theta y_min}`.
    pub alpha_p: f64,
    /// Ultimate bound `sqrt(k_theta d_theta^2 / (2 alpha_p y_min))`.
    pub k_p: f64,
    pub y_min: f64,
    pub d_theta: f64,
}

pub fn convergence_diagnostics(
    gains: &IdentifierGains,
    stack: &HistoryStack,
    d_bar: f64,
) -> Result<ConvergenceDiagnostics> {
    let (ok, y_min) = stack.rank_condition();
    if !ok {
        return Err(Error::RankDeficient { y_min });
    }
    let k_zeta_min = gains.k_zeta.min();
    let alpha_p = 0.5 * (2.0 * k_zeta_min).min(gains.k_theta * y_min);
    let d_theta = stack.d_theta(d_bar);
    let k_p = (gains.k_theta * d_theta * d_theta / (2.0 * alpha_p * y_min)).sqrt();
    Ok(ConvergenceDiagnostics {
        alpha_p,
        k_p,
        y_min,
        d_theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VehicleParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vehicle() -> Vehicle {
        Vehicle::new(VehicleParams::default()).unwrap()
    }

    fn random_entry(v: &Vehicle, rng: &mut ChaCha8Rng, exact: bool) -> StackEntry {
        let s = State::from_zeta(&Vec6::from_fn(|_, _| rng.random_range(-1.0..1.0)));
        let c = Current::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 0.0, 0.0);
        let tau = Vec3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let zd = if exact {
            v.plant_derivative(&s, &c, &tau)
        } else {
            Vec6::zeros()
        };
        StackEntry::new(v, 0.0, s, c, tau, zd)
    }

    fn exact_stack(v: &Vehicle, n: usize, seed: u64) -> HistoryStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = HistoryStack::new(n);
        for _ in 0..n {
            st.insert(random_entry(v, &mut rng, true));
        }
        st
    }

    #[test]
    fn observer_exact_model_keeps_zero_error() {
        let v = vehicle();
        let stack = exact_stack(&v, 10, 1);
        let s = State::from_zeta(&Vec6::new(0.5, -0.2, 0.1, 0.3, 0.1, -0.2));
        let c = Current::new(0.1, 0.0, 0.0, 0.0);
        let tau = Vec3::new(1.0, 2.0, 0.5);
        let id = IdentifierState::new(s.zeta(), *v.true_theta(), IdentifierGains::default());
        // Observer derivative equals the plant derivative: the error cannot grow.
        let rate = id.observer_rate(&v, &s, &c, &tau);
        assert!((rate - v.plant_derivative(&s, &c, &tau)).norm() < 1e-10);
        let th = id.parameter_rate(&v, &stack, &s, &c);
        assert!(th.norm() < 1e-9, "{th}");
    }

    #[test]
    fn observer_error_decays_at_gain_rate() {
        // Frozen plant state with exact parameters: zeta_tilde' = -k_zeta zeta_tilde.
        let v = vehicle();
        let s = State::from_zeta(&Vec6::new(0.5, -0.2, 0.1, 0.3, 0.1, -0.2));
        let c = Current::none();
        let tau = Vec3::zeros();
        let mut id = IdentifierState::new(
            s.zeta() + Vec6::repeat(0.1),
            *v.true_theta(),
            IdentifierGains::default(),
        );
        // Subtract the true derivative so the "frozen zeta" assumption holds.
        let drift = v.plant_derivative(&s, &c, &tau);
        let dt = 1e-4;
        let e0 = id.zeta_error(&s).norm();
        for _ in 0..1000 {
            let next = id.observer_step(&v, &s, &c, &tau, dt).unwrap();
            id.zeta_hat = next - drift * dt;
        }
        let got = id.zeta_error(&s).norm();
        let euler = e0 * (1.0 - 25.0 * dt).powi(1000);
        assert!((got - euler).abs() / euler < 1e-9, "{got} vs {euler}");
        let exact = e0 * (-25.0f64 * 0.1).exp();
        assert!((got - exact).abs() / exact < 5e-3);
    }

    #[test]
    fn observer_steady_error_bounded_by_regressor() {
        let v = vehicle();
        let s = State::from_zeta(&Vec6::new(0.0, 0.0, 0.0, 0.4, 0.3, 0.2));
        let c = Current::none();
        let tau = Vec3::zeros();
        let th_hat = ParameterVector(v.true_theta().0 * 0.8);
        let mut id = IdentifierState::new(s.zeta(), th_hat, IdentifierGains::default());
        let drift = v.plant_derivative(&s, &c, &tau);
        for _ in 0..5000 {
            let next = id.observer_step(&v, &s, &c, &tau, 1e-3).unwrap();
            id.zeta_hat = next - drift * 1e-3;
        }
        let y_tilde = v.regressor_full(&s, &c) * (v.true_theta().0 - th_hat.0);
        let err = id.zeta_error(&s).norm();
        assert!(err <= y_tilde.norm() / 25.0 * (1.0 + 1e-6), "{err}");
        assert!((err - y_tilde.norm() / 25.0).abs() < 1e-6);
    }

    #[test]
    fn observer_divergence_detected() {
        let v = vehicle();
        let id = IdentifierState::new(Vec6::zeros(), ParameterVector::zeros(), IdentifierGains::default());
        let r = id.observer_step(&v, &State::zero(), &Current::none(), &Vec3::new(f64::INFINITY, 0.0, 0.0), 0.02);
        assert!(matches!(r, Err(Error::IdentifierDivergence { .. })));
    }

    fn window_of<F: Fn(f64) -> f64>(f: F, t0: f64, half: usize, h: f64) -> Vec<(f64, Vec6)> {
        (0..=2 * half)
            .map(|i| {
                let t = t0 + (i as f64 - half as f64) * h;
                (t, Vec6::repeat(f(t)))
            })
            .collect()
    }

    #[test]
    fn smoother_reproduces_polynomials() {
        let w = window_of(|t| 2.0 + 3.0 * t, 1.0, 12, 0.02);
        let d = smooth_derivative(&w, 1.0, 5).unwrap();
        assert!((d.derivative - Vec6::repeat(3.0)).norm() < 1e-10);
        let w = window_of(|t| 1.0 - t + 0.5 * t * t, 2.0, 12, 0.02);
        let d = smooth_derivative(&w, 2.0, 2).unwrap();
        assert!((d.derivative - Vec6::repeat(1.0)).norm() < 1e-10);
        assert!(d.error_bound < 1e-9);
    }

    #[test]
    fn smoother_sine_accuracy() {
        use std::f64::consts::PI;
        for t0 in [0.0, 0.1, 0.37] {
            let w: Vec<_> = window_of(|t| (2.0 * PI * t).sin(), t0, 12, 0.02)
                .into_iter()
                .map(|(t, mut z)| {
                    z[2] = 0.0;
                    (t, z)
                })
                .collect();
            let d = smooth_derivative(&w, t0, SmootherConfig::default().order).unwrap();
            let exact = 2.0 * PI * (2.0 * PI * t0).cos();
            assert!((d.derivative[0] - exact).abs() <= 1e-3 * 2.0 * PI, "t0={t0}");
        }
    }

    #[test]
    fn smoother_unwraps_yaw() {
        use std::f64::consts::PI;
        let w: Vec<_> = (0..25)
            .map(|i| {
                let t = i as f64 * 0.02;
                let mut z = Vec6::zeros();
                z[2] = wrap_angle(PI - 0.1 + 0.4 * t);
                (t, z)
            })
            .collect();
        let d = smooth_derivative(&w, 0.24, 3).unwrap();
        assert!((d.derivative[2] - 0.4).abs() < 1e-9);
    }

    #[test]
    fn smoother_preconditions() {
        let w = window_of(|t| t, 0.0, 1, 0.02);
        assert!(matches!(smooth_derivative(&w, 0.0, 2), Err(Error::Precondition(_))));
        let w = window_of(|t| t, 0.0, 6, 0.02);
        assert!(matches!(smooth_derivative(&w, w[12].0, 2), Err(Error::Precondition(_))));
        assert!(matches!(smooth_derivative(&w, 5.0, 2), Err(Error::Precondition(_))));
    }

    fn synthetic_entry(v: &Vehicle, y: Mat68) -> StackEntry {
        let mut e = StackEntry::new(v, 0.0, State::zero(), Current::none(), Vec3::zeros(), Vec6::zeros());
        e.y = y;
        e
    }

    #[test]
    fn stack_insert_rules() {
        let v = vehicle();
        let mut st = HistoryStack::new(2);
        let mut a = Mat68::zeros();
        for i in 0..6 {
            a[(i, i)] = 1.0;
        }
        let mut b = Mat68::zeros();
        b[(0, 6)] = 1.0;
        b[(1, 7)] = 1.0;
        assert!(st.insert(synthetic_entry(&v, a)));
        assert!(st.insert(synthetic_entry(&v, b)));
        let before = st.sigma_min();
        assert!((before - 1.0).abs() < 1e-12);
        // A duplicate of an existing entry only trades information away.
        assert!(!st.insert(synthetic_entry(&v, a)));
        assert!(!st.insert(synthetic_entry(&v, b)));
        assert_eq!(st.sigma_min(), before);
    }

    #[test]
    fn stack_prefers_new_information() {
        let v = vehicle();
        // Full stack with one weak direction (parameter 7).
        let mut st = HistoryStack::new(3);
        let mut a = Mat68::zeros();
        for i in 0..6 {
            a[(i, i)] = 1.0;
        }
        let mut b = Mat68::zeros();
        b[(0, 6)] = 1.0;
        b[(1, 7)] = 0.1;
        st.insert(synthetic_entry(&v, a));
        st.insert(synthetic_entry(&v, b));
        st.insert(synthetic_entry(&v, a));
        let before = st.sigma_min();
        // Redundant candidate (already well covered) vs one along the weak axis.
        let mut redundant_st = st.clone();
        assert!(!redundant_st.insert(synthetic_entry(&v, a)));
        let mut orth = Mat68::zeros();
        orth[(2, 7)] = 1.0;
        assert!(st.insert(synthetic_entry(&v, orth)));
        assert!(st.sigma_min() > before);
        // Brute-force oracle: sigma_min from an SVD of the stacked regressors.
        let stacked = DMatrix::from_fn(18, 8, |r, c| st.entries()[r / 6].y[(r % 6, c)]);
        let svd_min = stacked.singular_values().min();
        assert!((svd_min - st.sigma_min()).abs() < 1e-10);
    }

    #[test]
    fn rank_condition_cases() {
        let v = vehicle();
        let st = exact_stack(&v, 1, 3);
        assert!(!st.rank_condition().0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = random_entry(&v, &mut rng, true);
        let mut rep = HistoryStack::new(10);
        for _ in 0..10 {
            rep.insert(e.clone());
        }
        assert!(!rep.rank_condition().0);
        let st = exact_stack(&v, 40, 5);
        let (ok, y_min) = st.rank_condition();
        assert!(ok && y_min > 0.0);
    }

    #[test]
    fn parameter_step_requires_stack() {
        let v = vehicle();
        let id = IdentifierState::new(Vec6::zeros(), ParameterVector::zeros(), IdentifierGains::default());
        let r = id.parameter_step(&v, &HistoryStack::new(3), &State::zero(), &Current::none(), 0.02);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn parameter_error_decays_in_weighted_norm() {
        let v = vehicle();
        let st = exact_stack(&v, 40, 6);
        let s = State::zero();
        let c = Current::none();
        let gains = IdentifierGains::default();
        let mut id = IdentifierState::new(s.zeta(), ParameterVector::zeros(), gains.clone());
        let theta = v.true_theta().0;
        let weighted = |th: &Vec8| {
            (theta - th)
                .iter()
                .zip(gains.gamma_theta.iter())
                .map(|(e, g)| e * e / g)
                .sum::<f64>()
        };
        let a = Mat8::from_diagonal(&gains.gamma_theta) * st.gram() * gains.k_theta;
        let lam_max = a.complex_eigenvalues().iter().map(|e| e.re).fold(0.0, f64::max);
        let dt = 0.5 / lam_max;
        let mut prev = weighted(&id.theta_hat.0);
        for _ in 0..200 {
            id.theta_hat = id.parameter_step(&v, &st, &s, &c, dt).unwrap();
            let now = weighted(&id.theta_hat.0);
            assert!(now <= prev);
            prev = now;
        }
        // Compare against the linear ODE theta_tilde' = -Gamma k S theta_tilde (Euler).
        let mut tt = theta;
        for _ in 0..200 {
            tt -= a * tt * dt;
        }
        assert!(((theta - id.theta_hat.0) - tt).norm() < 1e-8 * theta.norm());
    }

    #[test]
    fn parameter_update_order_invariant() {
        let v = vehicle();
        let st = exact_stack(&v, 20, 7);
        let mut rev = st.clone();
        rev.entries.reverse();
        let id = IdentifierState::new(Vec6::zeros(), ParameterVector::zeros(), IdentifierGains::default());
        let s = State::from_zeta(&Vec6::new(0.1, 0.2, 0.3, 0.4, 0.5, 0.6));
        let a = id.parameter_step(&v, &st, &s, &Current::none(), 0.02).unwrap();
        let b = id.parameter_step(&v, &rev, &s, &Current::none(), 0.02).unwrap();
        assert!((a.0 - b.0).norm() <= 1e-12 * a.0.norm());
    }

    #[test]
    fn diagnostics_formula() {
        let v = vehicle();
        let st = exact_stack(&v, 40, 8);
        let g = IdentifierGains::default();
        let d0 = convergence_diagnostics(&g, &st, 0.0).unwrap();
        assert_eq!(d0.k_p, 0.0);
        assert_eq!(d0.alpha_p, 0.5 * f64::min(50.0, 12.5 * d0.y_min));
        let d = convergence_diagnostics(&g, &st, 0.01).unwrap();
        let norms: f64 = st
            .entries()
            .iter()
            .map(|e| DMatrix::from_fn(6, 8, |r, c| e.y[(r, c)]).singular_values().max())
            .sum();
        let d_theta = 0.01 * norms;
        let kp = (12.5 * d_theta * d_theta / (2.0 * d.alpha_p * d.y_min)).sqrt();
        assert!((d.k_p - kp).abs() <= 1e-10 * kp);
        assert!(convergence_diagnostics(&g, &exact_stack(&v, 1, 9), 0.1).is_err());
    }

    #[test]
    fn lyapunov_class_k_bounds() {
        let g = IdentifierGains::default();
        let id = IdentifierState::new(Vec6::zeros(), ParameterVector::zeros(), g.clone());
        let (lo, hi) = (g.gamma_theta.min(), g.gamma_theta.max());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let zt = Vec6::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let tt = Vec8::from_fn(|_, _| rng.random_range(-50.0..50.0));
            let z2 = zt.norm_squared() + tt.norm_squared();
            let vp = id.lyapunov(&zt, &tt);
            // V_P weights theta_tilde by Gamma^-1, so the eigenvalues enter inverted.
            assert!(0.5 * f64::min(1.0, 1.0 / hi) * z2 <= vp * (1.0 + 1e-12));
            assert!(vp <= 0.5 * f64::max(1.0, 1.0 / lo) * z2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn stack_csv_round_trip_recomputes_regressors() {
        let v = vehicle();
        let st = exact_stack(&v, 40, 11);
        let mut buf = Vec::new();
        st.write_csv(&mut buf).unwrap();
        let back = HistoryStack::read_csv(&buf[..], &v, 40).unwrap();
        assert_eq!(back.len(), 40);
        for (a, b) in st.entries().iter().zip(back.entries()) {
            assert_eq!(a.y, b.y);
            assert_eq!(a.zeta_dot_bar, b.zeta_dot_bar);
        }
    }

    #[test]
    fn stack_load_rejects_rank_deficient() {
        let v = vehicle();
        let st = exact_stack(&v, 1, 12);
        let mut buf = Vec::new();
        st.write_csv(&mut buf).unwrap();
        assert!(matches!(
            HistoryStack::read_csv(&buf[..], &v, 40),
            Err(Error::RankDeficient { .. })
        ));
    }
}
