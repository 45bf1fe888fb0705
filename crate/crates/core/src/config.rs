//! Run configuration in a flat `key = value` text format.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key ws* '=' ws* value
//! ```
//!
//! Keys are the long CLI flag names without the leading dashes. Later
//! entries override earlier ones, and CLI flags override the file.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{count_shifts, EntanglerClosure};
use crate::head::Constraint;
use crate::pauli::{Pauli, PauliString};
use crate::sim::DEFAULT_QUBIT_CAP as MAX_QUBITS;
use crate::shadows::{Strategy, DEFAULT_SHADOW_CONST};

pub const TOOL: &str = "postvar";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {msg}")]
    Value { key: String, msg: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Feature source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    #[default]
    Exact,
    Direct,
    Shadows,
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeKind::Exact => "exact",
            ModeKind::Direct => "direct",
            ModeKind::Shadows => "shadows",
        })
    }
}

impl FromStr for ModeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(ModeKind::Exact),
            "direct" => Ok(ModeKind::Direct),
            "shadows" => Ok(ModeKind::Shadows),
            _ => Err(format!("unknown mode {s:?} (exact|direct|shadows)")),
        }
    }
}

/// Synthetic dataset kinds, including labels planted in feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthSource {
    Blobs,
    Parity,
    Linear,
    /// Uniform inputs; labels `y = Q w` for the exact feature matrix `Q`
    /// of the configured strategy and `w ~ N(0, I)`.
    PlantedLinear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synth(SynthSource),
    /// Fashion-MNIST IDX files under the data directory.
    Fmnist,
    Csv(PathBuf),
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Synth(k) => f.write_str(match k {
                SynthSource::Blobs => "synth:blobs",
                SynthSource::Parity => "synth:parity",
                SynthSource::Linear => "synth:linear",
                SynthSource::PlantedLinear => "synth:planted-linear",
            }),
            DatasetSource::Fmnist => f.write_str("fmnist"),
            DatasetSource::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

impl FromStr for DatasetSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(kind) = s.strip_prefix("synth:") {
            let k = match kind {
                "blobs" => SynthSource::Blobs,
                "parity" => SynthSource::Parity,
                "linear" => SynthSource::Linear,
                "planted-linear" => SynthSource::PlantedLinear,
                _ => return Err(format!("unknown synthetic kind {kind:?}")),
            };
            return Ok(DatasetSource::Synth(k));
        }
        if s == "fmnist" {
            return Ok(DatasetSource::Fmnist);
        }
        let path = s.strip_prefix("csv:").unwrap_or(s);
        if path.is_empty() {
            return Err("empty dataset path".into());
        }
        Ok(DatasetSource::Csv(PathBuf::from(path)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Regression,
    Binary,
    /// Class count taken from the data.
    Multiclass,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Regression => "regression",
            TaskKind::Binary => "binary",
            TaskKind::Multiclass => "multiclass",
        })
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "binary" => Ok(TaskKind::Binary),
            "multiclass" => Ok(TaskKind::Multiclass),
            _ => Err(format!("unknown task {s:?} (regression|binary|multiclass)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n: usize,
    pub locality: usize,
    pub order: usize,
    pub strategy: Strategy,
    pub mode: ModeKind,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub layers: usize,
    pub closure: EntanglerClosure,
    /// Observable for ansatz expansion; `Z` on qubit 0 when unset.
    pub observable: Option<PauliString>,
    pub shadow_const: f64,
    pub prune: bool,
    pub tau_g: f64,
    pub tau_f: f64,
    pub dataset: DatasetSource,
    /// Synthetic training rows.
    pub samples: usize,
    /// Synthetic test rows.
    pub test_samples: usize,
    /// Synthetic input length.
    pub dim: usize,
    pub classes: Vec<u8>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub task: TaskKind,
    pub constraint: Constraint,
    pub intercept: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 4,
            locality: 1,
            order: 1,
            strategy: Strategy::Hybrid,
            mode: ModeKind::Exact,
            epsilon: 0.1,
            delta: 0.05,
            seed: 0,
            layers: 2,
            closure: EntanglerClosure::Mirrored,
            observable: None,
            shadow_const: DEFAULT_SHADOW_CONST,
            prune: false,
            tau_g: 1e-3,
            tau_f: 1e-3,
            dataset: DatasetSource::Synth(SynthSource::Blobs),
            samples: 100,
            test_samples: 0,
            dim: 16,
            classes: vec![4, 6],
            train_per_class: 200,
            test_per_class: 50,
            task: TaskKind::Regression,
            constraint: Constraint::None,
            intercept: false,
            out: PathBuf::from("out"),
        }
    }
}

/// Keys in canonical output order.
pub const KEYS: &[&str] = &[
    "n",
    "locality",
    "order",
    "strategy",
    "mode",
    "epsilon",
    "delta",
    "seed",
    "layers",
    "closure",
    "observable",
    "shadow-const",
    "prune",
    "tau-g",
    "tau-f",
    "dataset",
    "samples",
    "test-samples",
    "dim",
    "classes",
    "train-per-class",
    "test-per-class",
    "task",
    "constraint",
    "intercept",
    "out",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        msg: e.to_string(),
    })
}

impl RunConfig {
    /// Sets one entry from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "n" => self.n = parse(key, v)?,
            "locality" => self.locality = parse(key, v)?,
            "order" => self.order = parse(key, v)?,
            "strategy" => self.strategy = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "closure" => {
                self.closure = match v {
                    "mirrored" => EntanglerClosure::Mirrored,
                    "forward" => EntanglerClosure::Forward,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            msg: format!("unknown closure {v:?} (mirrored|forward)"),
                        })
                    }
                }
            }
            "observable" => {
                self.observable = match v {
                    "" | "default" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "shadow-const" => self.shadow_const = parse(key, v)?,
            "prune" => self.prune = parse(key, v)?,
            "tau-g" => self.tau_g = parse(key, v)?,
            "tau-f" => self.tau_f = parse(key, v)?,
            "dataset" => self.dataset = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "test-samples" => self.test_samples = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "classes" => {
                self.classes = v
                    .split(',')
                    .map(|c| parse::<u8>(key, c.trim()))
                    .collect::<Result<_, _>>()?
            }
            "train-per-class" => self.train_per_class = parse(key, v)?,
            "test-per-class" => self.test_per_class = parse(key, v)?,
            "task" => self.task = parse(key, v)?,
            "constraint" => self.constraint = parse(key, v)?,
            "intercept" => self.intercept = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Text form of one entry.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n" => self.n.to_string(),
            "locality" => self.locality.to_string(),
            "order" => self.order.to_string(),
            "strategy" => self.strategy.to_string(),
            "mode" => self.mode.to_string(),
            "epsilon" => format!("{:?}", self.epsilon),
            "delta" => format!("{:?}", self.delta),
            "seed" => self.seed.to_string(),
            "layers" => self.layers.to_string(),
            "closure" => match self.closure {
                EntanglerClosure::Mirrored => "mirrored".into(),
                EntanglerClosure::Forward => "forward".into(),
            },
            "observable" => self.observable.map_or("default".into(), |p| p.to_string()),
            "shadow-const" => format!("{:?}", self.shadow_const),
            "prune" => self.prune.to_string(),
            "tau-g" => format!("{:?}", self.tau_g),
            "tau-f" => format!("{:?}", self.tau_f),
            "dataset" => self.dataset.to_string(),
            "samples" => self.samples.to_string(),
            "test-samples" => self.test_samples.to_string(),
            "dim" => self.dim.to_string(),
            "classes" => self
                .classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "train-per-class" => self.train_per_class.to_string(),
            "test-per-class" => self.test_per_class.to_string(),
            "task" => self.task.to_string(),
            "constraint" => self.constraint.to_string(),
            "intercept" => self.intercept.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        })
    }

    /// Applies every entry of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| ConfigError::Syntax {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Canonical text, one `key = value` line per key.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Comment lines embedding tool version and the full config.
    pub fn artifact_header(&self) -> Vec<String> {
        let mut out = vec![format!("{TOOL} {VERSION}")];
        out.extend(KEYS.iter().map(|k| format!("config {k} = {}", self.get(k).expect("known key"))));
        out
    }

    /// Parameter count of the configured Ansatz.
    pub fn k(&self) -> usize {
        self.n * self.layers
    }

    pub fn ansatz_observable(&self) -> PauliString {
        self.observable.unwrap_or_else(|| {
            let mut letters = vec![Pauli::I; self.n.max(1)];
            letters[0] = Pauli::Z;
            PauliString::from_letters(&letters).expect("n within limits")
        })
    }

    /// Checks every cross-field constraint and reports all violations.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad = Vec::new();
        if self.n == 0 || self.n > MAX_QUBITS {
            bad.push(format!("n must be in 1..={MAX_QUBITS}, got {}", self.n));
        }
        if self.layers == 0 {
            bad.push("layers must be >= 1".to_string());
        }
        if self.closure == EntanglerClosure::Mirrored && self.n > 2 && self.layers % 2 == 1 {
            bad.push(format!(
                "mirrored closure needs an even layer count for n > 2, got {}",
                self.layers
            ));
        }
        let uses_l = self.strategy != Strategy::AnsatzExpansion;
        let uses_r = self.strategy != Strategy::ObservableConstruction;
        if uses_l && (self.locality == 0 || self.locality > self.n) {
            bad.push(format!("locality L must satisfy 1 <= L <= n = {}, got {}", self.n, self.locality));
        }
        if uses_r && (self.order == 0 || self.order > self.k()) {
            bad.push(format!(
                "order R must satisfy 1 <= R <= k = {}, got {}",
                self.k(),
                self.order
            ));
        }
        if uses_r && self.order <= self.k() && count_shifts(self.k(), self.order).is_err() {
            bad.push(format!("shift count for k={}, R={} overflows", self.k(), self.order));
        }
        if let Some(o) = self.observable {
            if o.n() != self.n {
                bad.push(format!("observable {o} acts on {} qubits, n = {}", o.n(), self.n));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 2.0) {
            bad.push(format!("epsilon must lie in (0, 2), got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            bad.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.shadow_const > 0.0 && self.shadow_const.is_finite()) {
            bad.push(format!("shadow-const must be > 0, got {}", self.shadow_const));
        }
        if !(self.tau_g >= 0.0 && self.tau_g.is_finite()) {
            bad.push(format!("tau-g must be >= 0, got {}", self.tau_g));
        }
        if !(0.0..=4.0).contains(&self.tau_f) {
            bad.push(format!("tau-f must lie in [0, 4], got {}", self.tau_f));
        }
        if let DatasetSource::Synth(_) = self.dataset {
            if self.samples == 0 {
                bad.push("samples must be >= 1".to_string());
            }
            if self.n > 0 && (self.dim == 0 || !self.dim.is_multiple_of(self.n)) {
                bad.push(format!("dim must be a positive multiple of n = {}, got {}", self.n, self.dim));
            }
        }
        if self.dataset == DatasetSource::Fmnist {
            if self.classes.len() < 2 {
                bad.push("classes needs at least two labels".to_string());
            }
            if self.classes.iter().any(|&c| c > 9) {
                bad.push("classes must be in 0..=9".to_string());
            }
            if self.train_per_class == 0 {
                bad.push("train-per-class must be >= 1".to_string());
            }
            if self.n > 0 && 16 % self.n != 0 {
                bad.push(format!("16 encoded pixels do not split over n = {} qubits", self.n));
            }
        }
        if let Constraint::Ridge { lambda } = self.constraint {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                bad.push(format!("ridge lambda must be >= 0, got {lambda}"));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parses_grammar() {
        let text = "# comment\n\nn = 2\nlocality=2\n  strategy = observable-construction \nconstraint = ridge:0.5\ndataset = synth:planted-linear\nobservable = XZ\nclasses = 1, 2,3\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(cfg.n, 2);
        assert_eq!(cfg.locality, 2);
        assert_eq!(cfg.strategy, Strategy::ObservableConstruction);
        assert_eq!(cfg.constraint, Constraint::Ridge { lambda: 0.5 });
        assert_eq!(cfg.dataset, DatasetSource::Synth(SynthSource::PlantedLinear));
        assert_eq!(cfg.observable.unwrap().to_string(), "XZ");
        assert_eq!(cfg.classes, vec![1, 2, 3]);
        let round = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn syntax_errors_name_the_line() {
        match RunConfig::from_text("n = 4\nbogus\n") {
            Err(ConfigError::Syntax { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("n = four").is_err());
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut cfg = RunConfig::default();
        cfg.locality = 5;
        cfg.order = 9;
        cfg.epsilon = 3.0;
        cfg.delta = 0.0;
        match cfg.validate() {
            Err(ConfigError::Invalid(v)) => {
                assert_eq!(v.len(), 4, "{v:?}");
                assert!(v[0].contains("L"));
                assert!(v[1].contains("R"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn strategy_gates_checks() {
        let mut cfg = RunConfig {
            strategy: Strategy::AnsatzExpansion,
            locality: 0,
            ..Default::default()
        };
        cfg.validate().unwrap();
        cfg.strategy = Strategy::ObservableConstruction;
        cfg.order = 0;
        cfg.locality = 2;
        cfg.validate().unwrap();
    }

    #[test]
    fn header_embeds_version_and_every_key() {
        let h = RunConfig::default().artifact_header();
        assert!(h[0].starts_with(TOOL));
        assert_eq!(h.len(), KEYS.len() + 1);
    }

    #[test]
    fn default_observable_is_z_on_first_qubit() {
        assert_eq!(RunConfig::default().ansatz_observable().to_string(), "ZIII");
    }
}
