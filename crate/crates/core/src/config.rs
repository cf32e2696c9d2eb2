//! Experiment configuration and its flat `key = value` text format.
//!
//! ```text
//! # comments start with '#'
//! mode = time-varying
//! sim.duration = 150
//! cost.q = [20, 50, 20, 10, 10, 10]
//! ```
//!
//! Every key is optional; omitted keys take their defaults. Lists are written
//! in brackets. `cost.q` and `cost.r` accept either the diagonal (6 or 3
//! entries) or the full row-major matrix (36 or 9 entries).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adp::{AdpGains, CostWeights};
use crate::dynamics::{ParameterVector, VehicleParams};
use crate::error::{Error, Result};
use crate::linalg::{Mat3, Mat6, Vec2, Vec3, Vec6, Vec8};
use crate::sim::{CurrentField, CurrentMode, SimConfig};
use crate::sysid::{IdentifierGains, SmootherConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Nonlinear plant in the time-varying current, current-free residual model.
    #[default]
    TimeVarying,
    /// Nonlinear plant in a constant earth-fixed current folded into the model.
    ConstantCurrent,
    /// Linearized plant without current and with exact, frozen parameters.
    LinearTest,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::TimeVarying => "time-varying",
            Mode::ConstantCurrent => "constant-current",
            Mode::LinearTest => "linear-test",
        }
    }

    pub fn current_mode(&self) -> CurrentMode {
        match self {
            Mode::TimeVarying => CurrentMode::TimeVarying,
            Mode::ConstantCurrent => CurrentMode::ConstantEarthFixed,
            Mode::LinearTest => CurrentMode::None,
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "time-varying" => Ok(Mode::TimeVarying),
            "constant-current" => Ok(Mode::ConstantCurrent),
            "linear-test" => Ok(Mode::LinearTest),
            _ => Err(format!(
                "unknown mode '{s}' (expected time-varying, constant-current or linear-test)"
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Exciting-trajectory data collection.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectionConfig {
    pub duration: f64,
    /// Scale on the multi-sine reference; zero disables excitation.
    pub amplitude: f64,
    pub kp: Vec3,
    pub kd: Vec3,
    /// Spacing of candidate stack points, seconds.
    pub candidate_spacing: f64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        Self {
            duration: 60.0,
            amplitude: 1.0,
            kp: Vec3::new(100.0, 100.0, 10.0),
            kd: Vec3::new(100.0, 100.0, 10.0),
            candidate_spacing: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationConfig {
    pub points: usize,
    /// Half-widths of the operating box around the station.
    pub half_width: Vec6,
}

impl Default for ExtrapolationConfig {
    fn default() -> Self {
        Self {
            points: 64,
            half_width: Vec6::new(5.0, 5.0, 0.5, 0.1, 0.1, 0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub vehicle: VehicleParams,
    pub current: CurrentField,
    pub sim: SimConfig,
    pub identifier: IdentifierGains,
    /// Bound on the stack derivative error used by the convergence diagnostics.
    pub derivative_bound: f64,
    pub smoother: SmootherConfig,
    pub adp: AdpGains,
    /// Control steps between critic updates.
    pub critic_period: usize,
    /// Relative norm of a seeded perturbation applied to the initial critic.
    pub critic_perturbation: f64,
    pub cost: CostWeights,
    pub extrapolation: ExtrapolationConfig,
    pub stack_capacity: usize,
    pub stack_path: PathBuf,
    pub output_dir: PathBuf,
    pub collection: CollectionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            vehicle: VehicleParams::default(),
            current: CurrentField::default(),
            sim: SimConfig::default(),
            identifier: IdentifierGains::default(),
            derivative_bound: 1e-3,
            smoother: SmootherConfig::default(),
            adp: AdpGains::default(),
            critic_period: 10,
            critic_perturbation: 0.0,
            cost: CostWeights::default(),
            extrapolation: ExtrapolationConfig::default(),
            stack_capacity: 40,
            stack_path: PathBuf::from("stack.csv"),
            output_dir: PathBuf::from("out"),
            collection: CollectionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.current.validate()?;
        self.sim.validate()?;
        self.identifier.validate()?;
        self.adp.validate()?;
        let pos = |v: f64, name: &str| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive")))
            }
        };
        pos(self.derivative_bound, "identifier.derivative_bound")?;
        pos(self.smoother.half_window, "smoother.half_window")?;
        pos(self.collection.duration, "collect.duration")?;
        pos(self.collection.candidate_spacing, "collect.candidate_spacing")?;
        if !(self.collection.amplitude >= 0.0) {
            return Err(Error::InvalidParameter("collect.amplitude must be >= 0".into()));
        }
        if self.collection.kp.iter().chain(self.collection.kd.iter()).any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidParameter("collection PD gains must be positive".into()));
        }
        if !(self.critic_perturbation >= 0.0) {
            return Err(Error::InvalidParameter("adp.critic_perturbation must be >= 0".into()));
        }
        for (v, name) in [
            (self.critic_period, "adp.critic_period"),
            (self.stack_capacity, "stack.capacity"),
            (self.extrapolation.points, "extrapolation.points"),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if self.extrapolation.half_width.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::InvalidParameter("extrapolation box must be non-empty".into()));
        }
        if self.current.direction.norm() == 0.0 {
            return Err(Error::InvalidParameter("current direction must be nonzero".into()));
        }
        Ok(())
    }

    /// Current field with its mode matched to the experiment mode.
    pub fn current_field(&self) -> CurrentField {
        CurrentField {
            mode: self.mode.current_mode(),
            ..self.current.clone()
        }
    }

    /// Earth-frame velocity of the constant current.
    pub fn constant_current(&self) -> Vec2 {
        self.current.direction * self.current.base_speed
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        parse_config(&text)
    }

    pub fn to_text(&self) -> String {
        serialize_config(self)
    }
}

struct Entry<'a> {
    line: usize,
    value: &'a str,
}

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(e: &Entry, key: &str) -> Result<f64> {
    e.value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| err(e.line, format!("{key}: expected a finite number, got '{}'", e.value)))
}

fn parse_u64(e: &Entry, key: &str) -> Result<u64> {
    e.value
        .parse::<u64>()
        .map_err(|_| err(e.line, format!("{key}: expected a non-negative integer, got '{}'", e.value)))
}

fn parse_list(e: &Entry, key: &str) -> Result<Vec<f64>> {
    let inner = e
        .value
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| err(e.line, format!("{key}: expected a bracketed list")))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(e.line, format!("{key}: malformed number '{s}'")))
        })
        .collect()
}

fn parse_fixed<const N: usize>(e: &Entry, key: &str) -> Result<[f64; N]> {
    let v = parse_list(e, key)?;
    v.try_into()
        .map_err(|v: Vec<f64>| err(e.line, format!("{key}: expected {N} entries, got {}", v.len())))
}

fn parse_string(e: &Entry) -> String {
    let v = e.value;
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
        .to_owned()
}

fn parse_square<const N: usize>(e: &Entry, key: &str) -> Result<nalgebra::SMatrix<f64, N, N>> {
    let v = parse_list(e, key)?;
    if v.len() == N {
        Ok(nalgebra::SMatrix::<f64, N, N>::from_diagonal(
            &nalgebra::SVector::<f64, N>::from_column_slice(&v),
        ))
    } else if v.len() == N * N {
        Ok(nalgebra::SMatrix::<f64, N, N>::from_row_slice(&v))
    } else {
        Err(err(
            e.line,
            format!("{key}: expected {N} diagonal or {} matrix entries, got {}", N * N, v.len()),
        ))
    }
}

/// Parses the text format, applying defaults for omitted keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<&str, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected 'key = value', got '{content}'")))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(err(line, "empty key or value"));
        }
        if let Some(prev) = entries.insert(key, Entry { line, value }) {
            return Err(err(line, format!("duplicate key '{key}' (first on line {})", prev.line)));
        }
    }

    let mut c = ExperimentConfig::default();
    let mut q: Option<(usize, Mat6)> = None;
    let mut r: Option<(usize, Mat3)> = None;
    for (&key, e) in &entries {
        match key {
            "mode" => c.mode = Mode::from_str(e.value).map_err(|m| err(e.line, m))?,
            "vehicle.mass" => c.vehicle.mass = parse_f64(e, key)?,
            "vehicle.iz" => c.vehicle.iz = parse_f64(e, key)?,
            "vehicle.added_mass" => c.vehicle.added_mass = Vec3::from(parse_fixed::<3>(e, key)?),
            "vehicle.theta" => {
                c.vehicle.theta = ParameterVector(Vec8::from(parse_fixed::<8>(e, key)?))
            }
            "current.direction" => c.current.direction = Vec2::from(parse_fixed::<2>(e, key)?),
            "current.base_speed" => c.current.base_speed = parse_f64(e, key)?,
            "current.amplitude" => c.current.amplitude = parse_f64(e, key)?,
            "current.period" => c.current.period = parse_f64(e, key)?,
            "sim.dt" => c.sim.dt = parse_f64(e, key)?,
            "sim.duration" => c.sim.duration = parse_f64(e, key)?,
            "sim.seed" => c.sim.seed = parse_u64(e, key)?,
            "sim.initial_state" => c.sim.initial_state = Vec6::from(parse_fixed::<6>(e, key)?),
            "sim.noise.pose" => c.sim.noise.pose = parse_f64(e, key)?,
            "sim.noise.velocity" => c.sim.noise.velocity = parse_f64(e, key)?,
            "sim.noise.current" => c.sim.noise.current = parse_f64(e, key)?,
            "identifier.k_zeta" => c.identifier.k_zeta = Vec6::from(parse_fixed::<6>(e, key)?),
            "identifier.k_theta" => c.identifier.k_theta = parse_f64(e, key)?,
            "identifier.gamma_theta" => {
                c.identifier.gamma_theta = Vec8::from(parse_fixed::<8>(e, key)?)
            }
            "identifier.derivative_bound" => c.derivative_bound = parse_f64(e, key)?,
            "smoother.half_window" => c.smoother.half_window = parse_f64(e, key)?,
            "smoother.order" => c.smoother.order = parse_u64(e, key)? as usize,
            "adp.k_c1" => c.adp.k_c1 = parse_f64(e, key)?,
            "adp.k_c2" => c.adp.k_c2 = parse_f64(e, key)?,
            "adp.k_a" => c.adp.k_a = parse_f64(e, key)?,
            "adp.k_rho" => c.adp.k_rho = parse_f64(e, key)?,
            "adp.beta" => c.adp.beta = parse_f64(e, key)?,
            "adp.gamma0" => c.adp.gamma0 = parse_f64(e, key)?,
            "adp.gamma_bar" => c.adp.gamma_bar = parse_f64(e, key)?,
            "adp.w_bar" => c.adp.w_bar = parse_f64(e, key)?,
            "adp.critic_period" => c.critic_period = parse_u64(e, key)? as usize,
            "adp.critic_perturbation" => c.critic_perturbation = parse_f64(e, key)?,
            "cost.q" => q = Some((e.line, parse_square::<6>(e, key)?)),
            "cost.r" => r = Some((e.line, parse_square::<3>(e, key)?)),
            "extrapolation.points" => c.extrapolation.points = parse_u64(e, key)? as usize,
            "extrapolation.box" => {
                c.extrapolation.half_width = Vec6::from(parse_fixed::<6>(e, key)?)
            }
            "stack.capacity" => c.stack_capacity = parse_u64(e, key)? as usize,
            "stack.path" => c.stack_path = PathBuf::from(parse_string(e)),
            "output.dir" => c.output_dir = PathBuf::from(parse_string(e)),
            "collect.duration" => c.collection.duration = parse_f64(e, key)?,
            "collect.amplitude" => c.collection.amplitude = parse_f64(e, key)?,
            "collect.kp" => c.collection.kp = Vec3::from(parse_fixed::<3>(e, key)?),
            "collect.kd" => c.collection.kd = Vec3::from(parse_fixed::<3>(e, key)?),
            "collect.candidate_spacing" => c.collection.candidate_spacing = parse_f64(e, key)?,
            _ => return Err(err(e.line, format!("unknown key '{key}'"))),
        }
    }

    if q.is_some() || r.is_some() {
        let line = q.map_or(0, |x| x.0).max(r.map_or(0, |x| x.0));
        let qm = q.map_or(*c.cost.q(), |x| x.1);
        let rm = r.map_or(*c.cost.r(), |x| x.1);
        let which = |e: Error, m: &str| match e {
            Error::InvalidParameter(s) if s.starts_with(m) => s,
            other => other.to_string(),
        };
        if let Err(e) = CostWeights::new(qm, *c.cost.r()) {
            return Err(err(q.map_or(line, |x| x.0), which(e, "Q")));
        }
        c.cost = CostWeights::new(qm, rm).map_err(|e| err(r.map_or(line, |x| x.0), which(e, "R")))?;
    }

    c.validate().map_err(|e| {
        let msg = e.to_string();
        let names = |k: &str| msg.contains(k) || k.rsplit('.').next().is_some_and(|s| msg.contains(s));
        match entries.iter().find(|(k, _)| msg.contains(*k)).or_else(|| entries.iter().find(|(k, _)| names(k))) {
            Some((_, entry)) => err(entry.line, msg),
            None => e,
        }
    })?;
    Ok(c)
}

fn fmt_list<'a>(v: impl IntoIterator<Item = &'a f64>) -> String {
    let items: Vec<String> = v.into_iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_square<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> String {
    if m == &nalgebra::SMatrix::<f64, N, N>::from_diagonal(&m.diagonal()) {
        fmt_list(m.diagonal().iter())
    } else {
        let rows: Vec<f64> = (0..N).flat_map(|i| (0..N).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
        fmt_list(rows.iter())
    }
}

/// Writes every key; `parse_config(&serialize_config(c)) == c`.
pub fn serialize_config(c: &ExperimentConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("mode", c.mode.to_string());
    kv("vehicle.mass", c.vehicle.mass.to_string());
    kv("vehicle.iz", c.vehicle.iz.to_string());
    kv("vehicle.added_mass", fmt_list(c.vehicle.added_mass.iter()));
    kv("vehicle.theta", fmt_list(c.vehicle.theta.0.iter()));
    kv("current.direction", fmt_list(c.current.direction.iter()));
    kv("current.base_speed", c.current.base_speed.to_string());
    kv("current.amplitude", c.current.amplitude.to_string());
    kv("current.period", c.current.period.to_string());
    kv("sim.dt", c.sim.dt.to_string());
    kv("sim.duration", c.sim.duration.to_string());
    kv("sim.seed", c.sim.seed.to_string());
    kv("sim.initial_state", fmt_list(c.sim.initial_state.iter()));
    kv("sim.noise.pose", c.sim.noise.pose.to_string());
    kv("sim.noise.velocity", c.sim.noise.velocity.to_string());
    kv("sim.noise.current", c.sim.noise.current.to_string());
    kv("identifier.k_zeta", fmt_list(c.identifier.k_zeta.iter()));
    kv("identifier.k_theta", c.identifier.k_theta.to_string());
    kv("identifier.gamma_theta", fmt_list(c.identifier.gamma_theta.iter()));
    kv("identifier.derivative_bound", c.derivative_bound.to_string());
    kv("smoother.half_window", c.smoother.half_window.to_string());
    kv("smoother.order", c.smoother.order.to_string());
    kv("adp.k_c1", c.adp.k_c1.to_string());
    kv("adp.k_c2", c.adp.k_c2.to_string());
    kv("adp.k_a", c.adp.k_a.to_string());
    kv("adp.k_rho", c.adp.k_rho.to_string());
    kv("adp.beta", c.adp.beta.to_string());
    kv("adp.gamma0", c.adp.gamma0.to_string());
    kv("adp.gamma_bar", c.adp.gamma_bar.to_string());
    kv("adp.w_bar", c.adp.w_bar.to_string());
    kv("adp.critic_period", c.critic_period.to_string());
    kv("adp.critic_perturbation", c.critic_perturbation.to_string());
    kv("cost.q", fmt_square(c.cost.q()));
    kv("cost.r", fmt_square(c.cost.r()));
    kv("extrapolation.points", c.extrapolation.points.to_string());
    kv("extrapolation.box", fmt_list(c.extrapolation.half_width.iter()));
    kv("stack.capacity", c.stack_capacity.to_string());
    kv("stack.path", format!("\"{}\"", c.stack_path.display()));
    kv("output.dir", format!("\"{}\"", c.output_dir.display()));
    kv("collect.duration", c.collection.duration.to_string());
    kv("collect.amplitude", c.collection.amplitude.to_string());
    kv("collect.kp", fmt_list(c.collection.kp.iter()));
    kv("collect.kd", fmt_list(c.collection.kd.iter()));
    kv("collect.candidate_spacing", c.collection.candidate_spacing.to_string());
    s
}
