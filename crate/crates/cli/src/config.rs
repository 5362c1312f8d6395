//! Run configuration: flat `section.key = value` lines, units in the keys.
//!
//! ```text
//! # ZZZ reference run
//! target.gate = zzz
//! pulse.duration_ns = 1500
//! search.seed = 0
//! ```

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::PathBuf;

use phasefilter::nvmodel::{FrameKind, NuclearRole};
use phasefilter::objective::TargetSpec;
use phasefilter::propagate::{DEFAULT_DT, DEFAULT_STRIDE};
use phasefilter::search::{CostForm, Method, SearchSpec, Start};
use phasefilter::walsh::SubsetMask;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: `{}`: {}", self.line, self.key, self.message)
        } else {
            write!(f, "`{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Zzz,
    Xzz,
}

impl Gate {
    pub fn name(&self) -> &'static str {
        match self {
            Gate::Zzz => "zzz",
            Gate::Xzz => "xzz",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gate: Gate,
    pub search: SearchSpec,
    /// Propagation step for artifacts and reports, seconds.
    pub dt: f64,
    pub stride: usize,
    pub out_dir: Option<PathBuf>,
}

const NUCLEUS_KEYS: [&str; 5] = ["a_zz_MHz", "a_perp_MHz", "gamma_MHz_per_T", "q_MHz", "m_I"];

const GLOBAL_KEYS: [&str; 28] = [
    "target.gate",
    "target.weight_1",
    "target.weight_2",
    "target.weight_3",
    "pulse.duration_ns",
    "pulse.taper",
    "pulse.tones",
    "pulse.amplitude_bound_mT",
    "pulse.frequency_band_MHz",
    "pulse.carrier_offset_MHz",
    "search.seed",
    "search.budget",
    "search.restarts",
    "search.method",
    "search.cost",
    "search.start",
    "search.lambda_leakage",
    "search.lambda_unitarity",
    "search.lambda_smoothness",
    "search.sigma0",
    "search.stop_below",
    "search.dt_ns",
    "grid.dt_ns",
    "grid.stride",
    "output.dir",
    "register.b0_mT",
    "register.gamma_e_MHz_per_mT",
    "search.threads",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_gate(Gate::Zzz)
    }
}

impl RunConfig {
    pub fn for_gate(gate: Gate) -> Self {
        let search = match gate {
            Gate::Zzz => SearchSpec::zzz(),
            Gate::Xzz => SearchSpec::xzz(),
        };
        RunConfig { gate, search, dt: DEFAULT_DT, stride: DEFAULT_STRIDE, out_dir: None }
    }

    pub fn frame(&self) -> FrameKind {
        self.search.frame
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError {
                line: i + 1,
                key: line.to_string(),
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            if !known_key(&key) {
                return Err(ConfigError { line: i + 1, key, message: "unknown key".into() });
            }
            if entries.insert(key.clone(), (i + 1, value.trim().to_string())).is_some() {
                return Err(ConfigError { line: i + 1, key, message: "duplicate key".into() });
            }
        }

        let gate = match entries.get("target.gate") {
            None => Gate::Zzz,
            Some((line, v)) => match v.as_str() {
                "zzz" => Gate::Zzz,
                "xzz" => Gate::Xzz,
                _ => return Err(bad(*line, "target.gate", "expected zzz or xzz")),
            },
        };
        let mut cfg = RunConfig::for_gate(gate);
        let s = &mut cfg.search;
        let mut weights = s.target.weights().to_vec();
        let mut targets: Vec<(SubsetMask, Option<f64>)> = Vec::new();

        for (key, (line, value)) in &entries {
            let line = *line;
            let num = || -> Result<f64, ConfigError> {
                value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(line, key, "expected a finite number"))
            };
            let int = || -> Result<u64, ConfigError> {
                value.parse::<u64>().map_err(|_| bad(line, key, "expected a nonnegative integer"))
            };
            match key.as_str() {
                "target.gate" => {}
                "target.weight_1" => weights[0] = num()?,
                "target.weight_2" => weights[1] = num()?,
                "target.weight_3" => weights[2] = num()?,
                "pulse.duration_ns" => s.duration = num()? * 1e-9,
                "pulse.taper" => s.taper = num()?,
                "pulse.tones" => s.tones = int()? as usize,
                "pulse.amplitude_bound_mT" => s.bounds.amplitude = num()? * 1e-3,
                "pulse.frequency_band_MHz" => s.bounds.frequency = num()? * 1e6 * TAU,
                "pulse.carrier_offset_MHz" => s.carrier_offset = num()? * 1e6 * TAU,
                "search.seed" => s.seed = int()?,
                "search.budget" => s.budget = int()? as usize,
                "search.restarts" => s.restarts = int()? as usize,
                "search.method" => s.method = Method::parse(value).map_err(|e| bad(line, key, &e.to_string()))?,
                "search.start" => s.start = Start::parse(value).map_err(|e| bad(line, key, &e.to_string()))?,
                "search.cost" => s.cost_form = CostForm::parse(value).map_err(|e| bad(line, key, &e.to_string()))?,
                "search.lambda_leakage" => s.penalties.leakage = num()?,
                "search.lambda_unitarity" => s.penalties.unitarity = num()?,
                "search.lambda_smoothness" => s.penalties.smoothness = num()?,
                "search.sigma0" => s.sigma0 = num()?,
                "search.stop_below" => s.stop_below = num()?,
                "search.dt_ns" => s.dt = num()? * 1e-9,
                "search.threads" => s.threads = int()? as usize,
                "grid.dt_ns" => cfg.dt = num()? * 1e-9,
                "grid.stride" => cfg.stride = int()? as usize,
                "output.dir" => cfg.out_dir = Some(PathBuf::from(value)),
                "register.b0_mT" => s.register.b0 = num()? * 1e-3,
                "register.gamma_e_MHz_per_mT" => s.register.gamma_e = num()? * 1e9,
                other => {
                    if let Some(label) = other.strip_prefix("target.delta_").and_then(|r| r.strip_suffix("_rad")) {
                        let mask = SubsetMask::parse_label(3, label).map_err(|e| bad(line, key, &e.to_string()))?;
                        let t = if value == "free" { None } else { Some(num()?) };
                        targets.push((mask, t));
                        continue;
                    }
                    let (name, field) = other
                        .strip_prefix("register.")
                        .and_then(|r| r.split_once('.'))
                        .expect("validated by known_key");
                    let nuc = s
                        .register
                        .nuclei
                        .iter_mut()
                        .find(|n| n.name.to_lowercase() == name)
                        .expect("validated by known_key");
                    match field {
                        "a_zz_MHz" => nuc.a_zz = num()? * 1e6,
                        "a_perp_MHz" => nuc.a_perp = num()? * 1e6,
                        "gamma_MHz_per_T" => nuc.gamma = num()? * 1e6,
                        "q_MHz" => nuc.q = num()? * 1e6,
                        "m_I" => match nuc.role {
                            NuclearRole::Spectator { .. } => nuc.role = NuclearRole::Spectator { m: num()? },
                            NuclearRole::Qubit => return Err(bad(line, key, "m_I applies to spectator nuclei only")),
                        },
                        _ => unreachable!("validated by known_key"),
                    }
                }
            }
        }

        let mut target = TargetSpec::new(3, weights).map_err(|e| bad(0, "target.weight_*", &e.to_string()))?;
        for mask in SubsetMask::nonempty(3).expect("n = 3") {
            target.set_target(mask, s.target.target(mask)).expect("same n");
        }
        for (mask, t) in targets {
            target.set_target(mask, t).map_err(|e| bad(0, &format!("target.delta_{}_rad", mask.label()), &e.to_string()))?;
        }
        s.target = target;
        if cfg.stride == 0 {
            return Err(bad(0, "grid.stride", "must be at least 1"));
        }
        if !(cfg.dt > 0.0) {
            return Err(bad(0, "grid.dt_ns", "must be positive"));
        }
        cfg.search.validate().map_err(|e| bad(0, "config", &e.to_string()))?;
        Ok(cfg)
    }
}

fn bad(line: usize, key: &str, message: &str) -> ConfigError {
    ConfigError { line, key: key.to_string(), message: message.to_string() }
}

fn known_key(key: &str) -> bool {
    if GLOBAL_KEYS.contains(&key) {
        return true;
    }
    if let Some(label) = key.strip_prefix("target.delta_").and_then(|r| r.strip_suffix("_rad")) {
        return SubsetMask::parse_label(3, label).is_ok();
    }
    if let Some((name, field)) = key.strip_prefix("register.").and_then(|r| r.split_once('.')) {
        return ["n14", "c1", "c2"].contains(&name) && NUCLEUS_KEYS.contains(&field);
    }
    false
}
