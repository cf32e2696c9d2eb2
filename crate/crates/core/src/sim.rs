//! Fixed-step simulation of the true plant under a current field.

use std::io::Write;
use std::path::Path;

use nalgebra::SVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{Current, Pose, State, Vehicle};
use crate::error::{Error, Result};
use crate::linalg::{Vec2, Vec3, Vec6};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurrentMode {
    #[default]
    TimeVarying,
    ConstantEarthFixed,
    None,
}

impl CurrentMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurrentMode::TimeVarying => "time-varying",
            CurrentMode::ConstantEarthFixed => "constant",
            CurrentMode::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "time-varying" => Some(CurrentMode::TimeVarying),
            "constant" => Some(CurrentMode::ConstantEarthFixed),
            "none" => Some(CurrentMode::None),
            _ => None,
        }
    }
}

/// Earth-fixed current along a single direction with a sinusoidal magnitude
/// `U0 + U1 sin(2 pi t / T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentField {
    pub mode: CurrentMode,
    pub direction: Vec2,
    pub base_speed: f64,
    pub amplitude: f64,
    pub period: f64,
}

impl Default for CurrentField {
    fn default() -> Self {
        let a = 30f64.to_radians();
        Self {
            mode: CurrentMode::TimeVarying,
            direction: Vec2::new(a.cos(), a.sin()),
            base_speed: 0.2,
            amplitude: 0.1,
            period: 40.0,
        }
    }
}

impl CurrentField {
    pub fn none() -> Self {
        Self {
            mode: CurrentMode::None,
            base_speed: 0.0,
            amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_speed >= 0.0) || !(self.amplitude >= 0.0) || !(self.period > 0.0) {
            return Err(Error::InvalidParameter(
                "current field needs U0 >= 0, U1 >= 0, T > 0".into(),
            ));
        }
        if (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "current direction must be a unit vector".into(),
            ));
        }
        Ok(())
    }

    /// Earth-frame current velocity and its time derivative at `t`.
    pub fn earth_velocity(&self, t: f64) -> (Vec2, Vec2) {
        let w = 2.0 * std::f64::consts::PI / self.period;
        let (speed, rate) = match self.mode {
            CurrentMode::None => (0.0, 0.0),
            CurrentMode::ConstantEarthFixed => (self.base_speed, 0.0),
            CurrentMode::TimeVarying => (
                self.base_speed + self.amplitude * (w * t).sin(),
                self.amplitude * w * (w * t).cos(),
            ),
        };
        (self.direction * speed, self.direction * rate)
    }
}

/// Body-frame current seen by a craft at `pose` turning at rate `r`.
///
/// The body-frame derivative combines the explicit time variation of the
/// earth-frame current with the rotation of the body frame.
pub fn current_at(field: &CurrentField, t: f64, pose: &Pose, r: f64) -> Current {
    let (vel, acc) = field.earth_velocity(t);
    let (s, c) = pose.psi.sin_cos();
    let to_body = |e: &Vec2| (c * e[0] + s * e[1], -s * e[0] + c * e[1]);
    let (uc, vc) = to_body(&vel);
    let (au, av) = to_body(&acc);
    Current::new(uc, vc, au + r * vc, av - r * uc)
}

/// One classical RK4 step of `x' = f(t, x)`.
pub fn rk4_step<const N: usize, F>(f: F, t: f64, x: &SVector<f64, N>, dt: f64) -> SVector<f64, N>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let k1 = f(t, x);
    let k2 = f(t + 0.5 * dt, &(x + k1 * (0.5 * dt)));
    let k3 = f(t + 0.5 * dt, &(x + k2 * (0.5 * dt)));
    let k4 = f(t + dt, &(x + k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// True plant: vehicle model plus the current field acting on it.
#[derive(Debug, Clone)]
pub struct Plant {
    pub vehicle: Vehicle,
    pub field: CurrentField,
}

impl Plant {
    pub fn new(vehicle: Vehicle, field: CurrentField) -> Self {
        Self { vehicle, field }
    }

    pub fn current(&self, t: f64, state: &State) -> Current {
        current_at(&self.field, t, &state.pose, state.vel.r)
    }

    fn derivative(&self, t: f64, z: &Vec6, tau: &Vec3) -> Vec6 {
        // Intermediate RK stages keep the raw yaw; wrapping happens once per step.
        let s = State::from_zeta(z);
        let cur = self.current(t, &s);
        self.vehicle.plant_derivative(&s, &cur, tau)
    }

    /// Advances the plant by `dt` with the force held constant.
    pub fn step(&self, state: &State, tau: &Vec3, t: f64, dt: f64) -> Result<State> {
        if !(dt > 0.0) {
            return Err(Error::Precondition("dt must be positive".into()));
        }
        let z = rk4_step(|t, z| self.derivative(t, z, tau), t, &state.zeta(), dt);
        let next = State::from_zeta(&z);
        if !next.is_finite() {
            return Err(Error::IntegrationFailure { step: 0 });
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseConfig {
    pub pose: f64,
    pub velocity: f64,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub initial_state: Vec6,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            duration: 150.0,
            seed: 0,
            noise: NoiseConfig::default(),
            initial_state: Vec6::new(4.0, 4.0, std::f64::consts::FRAC_PI_4, 0.0, 0.0, 0.0),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration >= self.dt) {
            return Err(Error::InvalidParameter("need dt > 0 and duration >= dt".into()));
        }
        let n = self.noise;
        if !(n.pose >= 0.0 && n.velocity >= 0.0 && n.current >= 0.0) {
            return Err(Error::InvalidParameter("noise std devs must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Signals available to a controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub state: State,
    pub current: Current,
}

/// Additive Gaussian measurement noise, deterministic for a given seed.
pub struct Sensor {
    rng: ChaCha8Rng,
    noise: NoiseConfig,
}

impl Sensor {
    pub fn new(noise: NoiseConfig, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
        }
    }

    fn draw(&mut self, std: f64) -> f64 {
        if std > 0.0 {
            Normal::new(0.0, std).expect("finite std").sample(&mut self.rng)
        } else {
            0.0
        }
    }

    pub fn measure(&mut self, state: &State, current: &Current) -> Measurement {
        let n = self.noise;
        let mut z = state.zeta();
        for i in 0..3 {
            z[i] += self.draw(n.pose);
            z[3 + i] += self.draw(n.velocity);
        }
        let c = current.nu_c();
        let cd = current.nu_c_dot();
        let current = Current::new(
            c[0] + self.draw(n.current),
            c[1] + self.draw(n.current),
            cd[0] + self.draw(n.current),
            cd[1] + self.draw(n.current),
        );
        Measurement {
            state: State::from_zeta(&z),
            current,
        }
    }
}

/// Per-step controller diagnostics recorded alongside the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub zeta_err: f64,
    pub theta_err: f64,
    pub delta: f64,
    pub delta_k_rms: f64,
    pub delta_k_max: f64,
    pub gamma_norm: f64,
    pub lambda_min: f64,
    pub wc_wa_diff: f64,
    pub wa_norm: f64,
    pub wc_ref_err: f64,
}

impl Diagnostics {
    pub const COLUMNS: [&'static str; 10] = [
        "zeta_err",
        "theta_err",
        "delta",
        "delta_k_rms",
        "delta_k_max",
        "gamma_norm",
        "lambda_min",
        "wc_wa_diff",
        "wa_norm",
        "wc_ref_err",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.zeta_err,
            self.theta_err,
            self.delta,
            self.delta_k_rms,
            self.delta_k_max,
            self.gamma_norm,
            self.lambda_min,
            self.wc_wa_diff,
            self.wa_norm,
            self.wc_ref_err,
        ]
    }

    pub fn from_values(v: &[f64]) -> Self {
        Self {
            zeta_err: v[0],
            theta_err: v[1],
            delta: v[2],
            delta_k_rms: v[3],
            delta_k_max: v[4],
            gamma_norm: v[5],
            lambda_min: v[6],
            wc_wa_diff: v[7],
            wa_norm: v[8],
            wc_ref_err: v[9],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub tau: Vec3,
    pub diag: Diagnostics,
}

impl ControlOutput {
    pub fn force(tau: Vec3) -> Self {
        Self {
            tau,
            diag: Diagnostics::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub zeta: Vec6,
    pub current: Current,
    pub tau: Vec3,
    pub diag: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
}

const BASE_COLUMNS: [&str; 12] = [
    "t", "x", "y", "psi", "u", "v", "r", "uc", "vc", "tau1", "tau2", "tau3",
];

impl Trajectory {
    pub fn header() -> Vec<&'static str> {
        BASE_COLUMNS
            .iter()
            .chain(Diagnostics::COLUMNS.iter())
            .copied()
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::header())?;
        for s in &self.samples {
            let c = s.current.nu_c();
            let mut row: Vec<String> = Vec::with_capacity(22);
            row.push(s.t.to_string());
            row.extend(s.zeta.iter().map(|v| v.to_string()));
            row.push(c[0].to_string());
            row.push(c[1].to_string());
            row.extend(s.tau.iter().map(|v| v.to_string()));
            row.extend(s.diag.values().iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads a trajectory back. Current derivatives are not persisted and load as zero.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
        if header != Self::header() {
            return Err(Error::Format {
                path: "<trajectory>".into(),
                msg: "unexpected trajectory header".into(),
            });
        }
        let mut samples = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let v: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format {
                    path: "<trajectory>".into(),
                    msg: e.to_string(),
                })?;
            samples.push(Sample {
                t: v[0],
                zeta: Vec6::from_column_slice(&v[1..7]),
                current: Current::new(v[7], v[8], 0.0, 0.0),
                tau: Vec3::from_column_slice(&v[9..12]),
                diag: Diagnostics::from_values(&v[12..22]),
            });
        }
        let dt = if samples.len() > 1 { samples[1].t - samples[0].t } else { 0.0 };
        Ok(Self { dt, samples })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f)).map_err(|e| match e {
            Error::Format { msg, .. } => Error::Format {
                path: path.to_owned(),
                msg,
            },
            other => other,
        })
    }
}

/// Runs the plant for `config.duration`, calling `controller` once per step.
///
/// The controller receives the step index, the time and the measured signals.
/// Sample `k` holds the state at `t = k dt` and the force applied over
/// `[k dt, (k + 1) dt)`.
pub fn run<F>(plant: &Plant, config: &SimConfig, mut controller: F) -> Result<Trajectory>
where
    F: FnMut(usize, f64, &Measurement) -> Result<ControlOutput>,
{
    config.validate()?;
    let n = config.steps();
    let mut sensor = Sensor::new(config.noise, config.seed);
    let mut state = State::from_zeta(&config.initial_state);
    let mut samples = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = k as f64 * config.dt;
        let current = plant.current(t, &state);
        let meas = sensor.measure(&state, &current);
        let out = controller(k, t, &meas)?;
        if !out.tau.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationFailure { step: k });
        }
        samples.push(Sample {
            t,
            zeta: state.zeta(),
            current,
            tau: out.tau,
            diag: out.diag,
        });
        if k < n {
            state = plant
                .step(&state, &out.tau, t, config.dt)
                .map_err(|e| match e {
                    Error::IntegrationFailure { .. } => Error::IntegrationFailure { step: k },
                    other => other,
                })?;
        }
    }
    Ok(Trajectory {
        dt: config.dt,
        samples,
    })
}
