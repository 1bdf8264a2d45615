//! Experiment configuration: scenario presets, TOML files and
//! environment overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pvbi::models::{MultibandScenario, RssScenario, ToyScenario};
use pvbi::solver::{SolverConfig, StepSizes};
use pvbi::unfolding::{OptimizeMode, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Prefix of environment variables that override config keys. Nested keys
/// are separated by a double underscore: `PVBI_SOLVER__PARTICLES=5`.
pub const ENV_PREFIX: &str = "PVBI_";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Cooperative RSS localization.
    #[default]
    Example1,
    /// Multiband delay estimation.
    Example2,
    /// Linear-Gaussian problem with a closed-form posterior.
    Toy,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Example1 => "example1",
            ScenarioKind::Example2 => "example2",
            ScenarioKind::Toy => "toy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnfoldConfig {
    pub layers: usize,
    pub train_instances: usize,
    pub validation_instances: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub train: TrainConfig,
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        Self {
            layers: 7,
            train_instances: 64,
            validation_instances: 16,
            hidden1: 32,
            hidden2: 64,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub prior_precision: Vec<f64>,
    pub layers: Vec<usize>,
    pub particles: Vec<usize>,
    /// Iterations of the untrained solver the unrolled network is compared with.
    pub reference_iterations: usize,
    /// Held-out instances per comparison trial.
    pub trial_size: usize,
    /// Monte-Carlo draws per Cramér-Rao bound.
    pub crlb_draws: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![5.0, 10.0, 15.0, 20.0],
            prior_precision: vec![0.05, 0.1, 0.2],
            layers: vec![3, 5, 7, 9],
            particles: vec![5, 10],
            reference_iterations: 35,
            trial_size: 10,
            crlb_draws: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    pub repetitions: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Also run the enumeration-based weight-only baseline in `solve`.
    pub reference_baseline: bool,
    pub example1: RssScenario,
    pub example2: MultibandScenario,
    pub toy: ToyScenario,
    pub solver: SolverConfig,
    pub unfold: UnfoldConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(ScenarioKind::Example1)
    }
}

impl ExperimentConfig {
    /// Tuned defaults for one scenario.
    pub fn preset(kind: ScenarioKind) -> Self {
        let mut cfg = Self {
            scenario: kind,
            repetitions: match kind {
                ScenarioKind::Example1 => 1000,
                ScenarioKind::Example2 => 400,
                ScenarioKind::Toy => 100,
            },
            seed: 0,
            out: PathBuf::from("runs").join(kind.name()),
            reference_baseline: false,
            example1: RssScenario {
                marginalize_references: true,
                ..RssScenario::default()
            },
            example2: MultibandScenario::default(),
            toy: ToyScenario {
                dim: 2,
                coupling: 0.5,
                ..ToyScenario::default()
            },
            solver: SolverConfig::default(),
            unfold: UnfoldConfig::default(),
            sweep: SweepConfig::default(),
        };
        match kind {
            ScenarioKind::Example1 | ScenarioKind::Toy => {
                cfg.unfold.train = TrainConfig {
                    batch: 32,
                    learning_rate: 0.05,
                    patience: 20,
                    mode: OptimizeMode::Direct,
                    ..TrainConfig::default()
                };
                cfg.unfold.train_instances = 128;
                cfg.unfold.validation_instances = 64;
            }
            ScenarioKind::Example2 => {
                cfg.solver.steps = StepSizes::Curvature {
                    scale: 3.0,
                    decay: 0.0,
                    weight: 0.05,
                };
                cfg.solver.subset_size = Some(64);
                cfg.unfold.train = TrainConfig {
                    iterations: 100,
                    b_grad: 200,
                    ..TrainConfig::default()
                };
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        let s = &self.sweep;
        if s.snr_db.is_empty() || s.prior_precision.is_empty() || s.layers.is_empty() || s.particles.is_empty() {
            bail!("sweep axes must be nonempty");
        }
        if s.layers.contains(&0) || s.trial_size == 0 || s.reference_iterations == 0 || s.crlb_draws == 0 {
            bail!("sweep counts must be at least 1");
        }
        if s.particles.iter().any(|&n| n < 2) {
            bail!("particle counts must be at least 2");
        }
        if self.unfold.layers == 0 || self.unfold.train_instances == 0 || self.unfold.validation_instances == 0 {
            bail!("unfold counts must be at least 1");
        }
        self.solver.validate()?;
        self.unfold.train.validate()?;
        match self.scenario {
            ScenarioKind::Example1 => self.example1.validate()?,
            ScenarioKind::Example2 => self.example2.validate()?,
            ScenarioKind::Toy => self.toy.validate()?,
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    /// Preset for the file's `scenario`, overlaid with the file, then with
    /// `env` entries carrying [`ENV_PREFIX`].
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let file: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse().with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let overrides: Vec<(Vec<String>, toml::Value)> = env
            .into_iter()
            .filter_map(|(k, v)| {
                let rest = k.strip_prefix(ENV_PREFIX)?;
                let path = rest.split("__").map(str::to_lowercase).collect();
                Some((path, parse_scalar(&v)))
            })
            .collect();
        let kind_of = |t: &toml::Table| -> Result<Option<ScenarioKind>> {
            match t.get("scenario") {
                Some(v) => Ok(Some(v.clone().try_into().context("invalid scenario")?)),
                None => Ok(None),
            }
        };
        let env_kind = overrides
            .iter()
            .find(|(p, _)| p.len() == 1 && p[0] == "scenario")
            .map(|(_, v)| v.clone().try_into::<ScenarioKind>())
            .transpose()
            .context("invalid scenario override")?;
        let kind = env_kind.or(kind_of(&file)?).unwrap_or_default();

        let mut merged = toml::Table::try_from(Self::preset(kind))?;
        merge(&mut merged, file);
        for (path, value) in overrides {
            set_path(&mut merged, &path, value)?;
        }
        let cfg: Self = toml::Value::Table(merged).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_scalar(s: &str) -> toml::Value {
    format!("v = {s}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(s.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    match path {
        [] => bail!("empty override key"),
        [key] => {
            table.insert(key.clone(), value);
            Ok(())
        }
        [head, rest @ ..] => {
            let entry = table
                .entry(head.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => set_path(t, rest, value),
                _ => bail!("override path through non-table key `{head}`"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in [ScenarioKind::Example1, ScenarioKind::Example2, ScenarioKind::Toy] {
            let cfg = ExperimentConfig::preset(kind);
            cfg.validate().unwrap();
            let text = toml::to_string(&cfg).unwrap();
            let back: ExperimentConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn env_overrides_nested_keys() {
        let env = vec![
            ("PVBI_SOLVER__PARTICLES".to_string(), "5".to_string()),
            ("PVBI_SCENARIO".to_string(), "example2".to_string()),
            ("PVBI_SWEEP__SNR_DB".to_string(), "[1.0, 2.0]".to_string()),
            ("HOME".to_string(), "/tmp".to_string()),
        ];
        let cfg = ExperimentConfig::load(None, env).unwrap();
        assert_eq!(cfg.solver.particles, 5);
        assert_eq!(cfg.scenario, ScenarioKind::Example2);
        assert_eq!(cfg.sweep.snr_db, vec![1.0, 2.0]);
        assert_eq!(cfg.solver.subset_size, Some(64));
    }

    #[test]
    fn zero_repetitions_rejected() {
        let env = vec![("PVBI_REPETITIONS".to_string(), "0".to_string())];
        assert!(ExperimentConfig::load(None, env).is_err());
        let env = vec![("PVBI_SWEEP__LAYERS".to_string(), "[]".to_string())];
        assert!(ExperimentConfig::load(None, env).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
