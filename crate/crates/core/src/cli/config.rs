//! Flat `key = value` experiment configs with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::classifier::{dyadic_ladder, Thresholds};
use crate::metric::check_ladder;
use crate::systems::{BaseMap, Drive, RotationNumber, State, SystemSpec};

pub const MIN_ORBIT_LENGTH: u64 = 1000;

/// A config problem, anchored to a line when it comes from one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dynamics,
    Packing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialPolicy {
    Random,
    Fixed(State),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricChoice {
    Intrinsic,
    Scaled(f64),
    Sup { horizon: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackingSettings {
    pub n: usize,
    pub r0: f64,
    pub octaves: u32,
    pub radii: u32,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub system: Option<SystemSpec>,
    pub length: u64,
    pub seed: u64,
    pub initial: InitialPolicy,
    pub burn_in: u64,
    pub cells: u32,
    pub cells2: Option<u32>,
    pub offset2: f64,
    pub metric: MetricChoice,
    pub eps: Vec<f64>,
    pub thresholds: Thresholds,
    pub anchors: usize,
    pub min_count: u64,
    pub packing: PackingSettings,
    pub out_dir: PathBuf,
    pub strict: bool,
    /// Every key with its effective value, defaults included.
    pub resolved: BTreeMap<String, String>,
}

const KEYS: &[&str] = &[
    "mode",
    "system.kind",
    "system.alpha",
    "system.rate",
    "system.drive",
    "system.amplitude",
    "system.base",
    "system.kappa",
    "orbit.T",
    "orbit.seed",
    "orbit.x0",
    "orbit.burn_in",
    "chart.cells",
    "chart.cells2",
    "chart.offset2",
    "metric.rule",
    "metric.scale",
    "metric.N",
    "ladder.k_min",
    "ladder.k_max",
    "ladder.eps",
    "classifier.cv_max",
    "classifier.theta",
    "classifier.quorum",
    "classifier.eps_min",
    "classifier.max_atoms",
    "classifier.growth_max",
    "classifier.tail_factor",
    "classifier.anchors",
    "classifier.min_count",
    "packing.n",
    "packing.r0",
    "packing.octaves",
    "packing.radii",
    "output.dir",
    "output.strict",
];

struct Entries {
    values: BTreeMap<String, (usize, String)>,
    resolved: BTreeMap<String, String>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.values.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn get<T>(&mut self, key: &str, default: Option<T>) -> Result<Option<T>, ConfigError>
    where
        T: std::str::FromStr + fmt::Display,
    {
        let out = match self.raw(key) {
            Some((line, v)) => Some(
                v.parse::<T>()
                    .map_err(|_| ConfigError { line: Some(line), message: format!("{key}: cannot parse '{v}'") })?,
            ),
            None => default,
        };
        if let Some(v) = &out {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(out)
    }

    fn string(&mut self, key: &str, default: &str) -> (Option<usize>, String) {
        let (line, v) = match self.raw(key) {
            Some((l, v)) => (Some(l), v.to_string()),
            None => (None, default.to_string()),
        };
        self.resolved.insert(key.to_string(), v.clone());
        (line, v)
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.values.get(key).map(|(l, _)| *l)
    }

    fn fail<T>(&self, key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
        Err(ConfigError { line: self.line(key), message: format!("{key}: {}", message.into()) })
    }
}

fn parse_entries(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError { line: Some(line), message: format!("expected 'key = value', got '{content}'") });
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError { line: Some(line), message: format!("unknown key '{key}'") });
        }
        if value.is_empty() {
            return Err(ConfigError { line: Some(line), message: format!("{key}: empty value") });
        }
        if values.insert(key.to_string(), (line, value.to_string())).is_some() {
            return Err(ConfigError { line: Some(line), message: format!("duplicate key '{key}'") });
        }
    }
    Ok(values)
}

fn rotation(e: &mut Entries, key: &str) -> Result<RotationNumber, ConfigError> {
    let (line, v) = e.string(key, "golden");
    RotationNumber::parse(&v).map_err(|err| ConfigError { line, message: format!("{key}: {err}") })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut e = Entries { values: parse_entries(text)?, resolved: BTreeMap::new() };
        let (line, mode) = e.string("mode", "dynamics");
        let mode = match mode.as_str() {
            "dynamics" => Mode::Dynamics,
            "packing" => Mode::Packing,
            other => return Err(ConfigError { line, message: format!("mode: unknown mode '{other}'") }),
        };
        let mut cfg = ExperimentConfig {
            mode,
            system: None,
            length: 0,
            seed: 0,
            initial: InitialPolicy::Random,
            burn_in: 0,
            cells: 0,
            cells2: None,
            offset2: 0.0,
            metric: MetricChoice::Intrinsic,
            eps: Vec::new(),
            thresholds: Thresholds::default(),
            anchors: 0,
            min_count: 0,
            packing: PackingSettings { n: 2, r0: 1.0, octaves: 8, radii: 1 },
            out_dir: PathBuf::new(),
            strict: false,
            resolved: BTreeMap::new(),
        };
        match mode {
            Mode::Dynamics => cfg.parse_dynamics(&mut e)?,
            Mode::Packing => cfg.parse_packing(&mut e)?,
        }
        let (_, dir) = e.string("output.dir", "out");
        cfg.out_dir = PathBuf::from(dir);
        cfg.strict = e.get("output.strict", Some(false))?.unwrap();
        // Keys that do not apply to the chosen mode are reported, not ignored.
        for key in e.values.keys() {
            if !e.resolved.contains_key(key) {
                return e.fail(key, "not used by this configuration");
            }
        }
        cfg.resolved = e.resolved;
        Ok(cfg)
    }

    fn parse_dynamics(&mut self, e: &mut Entries) -> Result<(), ConfigError> {
        if e.raw("system.kind").is_none() {
            return Err(ConfigError { line: None, message: "system.kind is required".into() });
        }
        let (line, kind) = e.string("system.kind", "");
        let spec = match kind.as_str() {
            "rotation" => SystemSpec::Rotation { alpha: rotation(e, "system.alpha")? },
            "product_doubling_rotation" => SystemSpec::ProductDoublingRotation { alpha: rotation(e, "system.alpha")? },
            "conjugated_rotation_cocycle" => SystemSpec::ConjugatedRotationCocycle {
                alpha: rotation(e, "system.alpha")?,
                amplitude: e.get("system.kappa", Some(0.5))?.unwrap(),
            },
            "contracting_fiber" => {
                let rate = e.get("system.rate", Some(0.5))?.unwrap();
                let drive = drive(e, "sine", 1.0 / 32.0)?;
                let (bline, base) = e.string("system.base", "rotation");
                let base = match base.as_str() {
                    "rotation" => BaseMap::Rotation(rotation(e, "system.alpha")?),
                    "doubling" => BaseMap::Doubling,
                    other => {
                        return Err(ConfigError {
                            line: bline,
                            message: format!("system.base: unknown base '{other}'"),
                        })
                    }
                };
                SystemSpec::ContractingFiber { rate, drive, base }
            }
            "neutral_center_toy" => SystemSpec::NeutralCenterToy {
                alpha: rotation(e, "system.alpha")?,
                drive: drive(e, "identity", 1.0 / 32.0)?,
                amplitude: e.get("system.kappa", Some(0.3))?.unwrap(),
            },
            other => return Err(ConfigError { line, message: format!("system.kind: unknown system kind '{other}'") }),
        };
        spec.validate().map_err(|err| ConfigError { line, message: format!("system: {err}") })?;
        self.system = Some(spec);

        let Some(length) = e.get::<u64>("orbit.T", None)? else {
            return Err(ConfigError { line: None, message: "orbit.T is required".into() });
        };
        if length < MIN_ORBIT_LENGTH {
            return e.fail("orbit.T", format!("orbit length {length} is below the minimum {MIN_ORBIT_LENGTH}"));
        }
        self.length = length;
        let Some(seed) = e.get::<u64>("orbit.seed", None)? else {
            return Err(ConfigError { line: None, message: "orbit.seed is required".into() });
        };
        self.seed = seed;
        let (xline, x0) = e.string("orbit.x0", "random");
        self.initial = if x0 == "random" {
            InitialPolicy::Random
        } else {
            let parts: Vec<&str> = x0.split(',').map(str::trim).collect();
            let nums: Option<Vec<f64>> = parts.iter().map(|p| p.parse().ok()).collect();
            match nums.as_deref() {
                Some([b]) => InitialPolicy::Fixed(State::new(*b, 0.0)),
                Some([b, v]) => InitialPolicy::Fixed(State::new(*b, *v)),
                _ => {
                    return Err(ConfigError {
                        line: xline,
                        message: format!("orbit.x0: expected 'random', 'x' or 'x, v', got '{x0}'"),
                    })
                }
            }
        };
        self.burn_in = e.get("orbit.burn_in", Some(1000))?.unwrap();

        self.cells = e.get("chart.cells", Some(64))?.unwrap();
        if self.cells == 0 {
            return e.fail("chart.cells", "must be positive");
        }
        self.cells2 = e.get::<u32>("chart.cells2", None)?;
        if self.cells2 == Some(0) {
            return e.fail("chart.cells2", "must be positive");
        }
        if self.cells2.is_some() {
            self.offset2 = e.get("chart.offset2", Some(0.0))?.unwrap();
        }

        let (mline, rule) = e.string("metric.rule", "intrinsic");
        self.metric = match rule.as_str() {
            "intrinsic" => MetricChoice::Intrinsic,
            "scaled" => {
                let c: f64 = e.get("metric.scale", Some(1.0))?.unwrap();
                if !(c > 0.0 && c.is_finite()) {
                    return e.fail("metric.scale", "must be positive");
                }
                MetricChoice::Scaled(c)
            }
            "sup" => {
                if !spec.has_fiber() {
                    return Err(ConfigError {
                        line: mline,
                        message: "metric.rule: sup needs a system with fibers".into(),
                    });
                }
                MetricChoice::Sup { horizon: e.get("metric.N", Some(64))?.unwrap() }
            }
            other => return Err(ConfigError { line: mline, message: format!("metric.rule: unknown rule '{other}'") }),
        };

        self.eps = if let Some((line, list)) = e.raw("ladder.eps").map(|(l, v)| (l, v.to_string())) {
            let eps: Option<Vec<f64>> = list.split(',').map(|p| p.trim().parse().ok()).collect();
            let eps = eps.ok_or_else(|| ConfigError {
                line: Some(line),
                message: format!("ladder.eps: cannot parse '{list}'"),
            })?;
            e.resolved.insert("ladder.eps".into(), list);
            eps
        } else {
            let lo: i32 = e.get("ladder.k_min", Some(2))?.unwrap();
            let hi: i32 = e.get("ladder.k_max", Some(12))?.unwrap();
            if hi < lo {
                return e.fail("ladder.k_max", "must be at least ladder.k_min");
            }
            dyadic_ladder(lo, hi)
        };
        check_ladder(&self.eps, "eps")
            .map_err(|err| ConfigError { line: e.line("ladder.eps"), message: err.to_string() })?;

        let t = &mut self.thresholds;
        t.cv_max = e.get("classifier.cv_max", Some(t.cv_max))?.unwrap();
        t.theta = e.get("classifier.theta", Some(t.theta))?.unwrap();
        t.quorum = e.get("classifier.quorum", Some(t.quorum))?.unwrap();
        t.eps_min = e.get("classifier.eps_min", Some(t.eps_min))?.unwrap();
        t.max_atoms = e.get("classifier.max_atoms", Some(t.max_atoms))?.unwrap();
        t.growth_max = e.get("classifier.growth_max", Some(t.growth_max))?.unwrap();
        t.tail_factor = e.get("classifier.tail_factor", Some(t.tail_factor))?.unwrap();
        if !(t.theta > 0.0 && t.theta <= 1.0) {
            return e.fail("classifier.theta", "must lie in (0, 1]");
        }
        if !(t.quorum > 0.0 && t.quorum <= 1.0) {
            return e.fail("classifier.quorum", "must lie in (0, 1]");
        }
        if !(t.eps_min > 0.0) {
            return e.fail("classifier.eps_min", "must be positive");
        }
        self.anchors = e.get("classifier.anchors", Some(16))?.unwrap();
        if self.anchors == 0 {
            return e.fail("classifier.anchors", "must be positive");
        }
        self.min_count = e.get("classifier.min_count", Some(crate::disintegration::DEFAULT_MIN_COUNT))?.unwrap();
        Ok(())
    }

    fn parse_packing(&mut self, e: &mut Entries) -> Result<(), ConfigError> {
        let n: usize = e.get("packing.n", Some(2))?.unwrap();
        if !(1..=3).contains(&n) {
            return e.fail("packing.n", "dimension must be 1, 2 or 3");
        }
        let r0: f64 = e.get("packing.r0", Some(1.0))?.unwrap();
        if !(r0 > 0.0 && r0.is_finite()) {
            return e.fail("packing.r0", "must be positive");
        }
        let octaves: u32 = e.get("packing.octaves", Some(8))?.unwrap();
        if !(3..=12).contains(&octaves) {
            return e.fail("packing.octaves", "must lie in 3..=12");
        }
        let radii: u32 = e.get("packing.radii", Some(1))?.unwrap();
        if !(1..=4).contains(&radii) {
            return e.fail("packing.radii", "must lie in 1..=4");
        }
        self.packing = PackingSettings { n, r0, octaves, radii };
        Ok(())
    }

    /// Canonical `key = value` text of the resolved config.
    pub fn canonical(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// Rough wall-clock estimate in seconds on one core, calibrated on the
    /// built-in systems.
    pub fn estimated_seconds(&self) -> f64 {
        match self.mode {
            Mode::Dynamics => {
                let doubling = matches!(
                    self.system,
                    Some(SystemSpec::ProductDoublingRotation { .. })
                        | Some(SystemSpec::ContractingFiber { base: BaseMap::Doubling, .. })
                );
                let per_state = if doubling { 7e-7 } else { 1.5e-7 };
                let charts = if self.cells2.is_some() { 2.0 } else { 1.0 };
                let orbit = (self.length + self.burn_in) as f64 * per_state * charts;
                let balls = (self.cells as usize * self.anchors * (self.eps.len() + 1)) as f64;
                let per_ball = match self.metric {
                    MetricChoice::Sup { horizon } => 3e-4 * (horizon as f64 + 1.0),
                    _ => 1e-6,
                };
                orbit + balls * per_ball
            }
            Mode::Packing => {
                let s = 2f64.powi(self.packing.octaves as i32);
                6e-8 * (16.0 * s).powi(self.packing.n as i32) * self.packing.radii as f64
            }
        }
    }
}

fn drive(e: &mut Entries, default: &str, amplitude: f64) -> Result<Drive, ConfigError> {
    let (line, d) = e.string("system.drive", default);
    match d.as_str() {
        "identity" => Ok(Drive::Identity),
        "sine" => Ok(Drive::Sine { amplitude: e.get("system.amplitude", Some(amplitude))?.unwrap() }),
        other => Err(ConfigError { line, message: format!("system.drive: unknown drive '{other}'") }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_rotation_config() {
        let cfg = ExperimentConfig::parse(
            "# rational rotation\nsystem.kind = rotation\nsystem.alpha = 1/3\norbit.T = 300000\norbit.seed = 1\nchart.cells = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.system, Some(SystemSpec::Rotation { alpha: RotationNumber::Rational { p: 1, q: 3 } }));
        assert_eq!(cfg.length, 300_000);
        assert_eq!(cfg.eps.len(), 11);
        assert_eq!(cfg.resolved["classifier.theta"], "0.9");
    }

    #[test]
    fn unknown_kind_names_the_key() {
        let err = ExperimentConfig::parse("system.kind = horseshoe\norbit.T = 5000\norbit.seed = 1\n").unwrap_err();
        assert_eq!(err.line, Some(1));
        assert!(err.message.contains("system.kind"), "{err}");
    }

    #[test]
    fn short_orbits_are_rejected_with_the_bound() {
        let err = ExperimentConfig::parse("system.kind = rotation\norbit.T = 10\norbit.seed = 1\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert!(err.message.contains("1000"));
    }

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::parse("system.kind = rotation\norbit.T = 10000\n").unwrap_err();
        assert!(err.message.contains("orbit.seed"));
    }

    #[test]
    fn malformed_lines_are_anchored() {
        let err = ExperimentConfig::parse("system.kind = rotation\n\nthis is not a pair\n").unwrap_err();
        assert_eq!(err.to_string(), "line 3: expected 'key = value', got 'this is not a pair'");
        let err = ExperimentConfig::parse("orbit.T = 1\norbit.T = 2\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        let err = ExperimentConfig::parse("colour = red\n").unwrap_err();
        assert!(err.message.contains("unknown key"));
    }

    #[test]
    fn keys_from_the_other_mode_are_rejected() {
        let err = ExperimentConfig::parse("mode = packing\norbit.T = 5000\n").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn hash_ignores_comments_and_order() {
        let a = ExperimentConfig::parse("orbit.seed = 1\nsystem.kind = rotation\norbit.T = 5000\n").unwrap();
        let b = ExperimentConfig::parse("# x\nsystem.kind = rotation # y\norbit.T = 5000\norbit.seed = 1\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse("system.kind = rotation\norbit.T = 5000\norbit.seed = 2\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }
}
