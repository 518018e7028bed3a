//! Experiment configuration: presets per scale, TOML overlay, CLI overrides
//! and the canonical hash recorded in every manifest.

use std::path::{Path, PathBuf};

use lengen_core::arch::{Activation, AttentionKind, Capacity, Family, ModelSpec, Normalization, INIT_STD};
use lengen_core::datagen::{DistributionKind, DistributionSpec};
use lengen_core::theory::{RnnProbe, TransformerProbe};
use lengen_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Lengthgen,
    Compgen,
    Failure,
    Cot,
    Nonrealizable,
    Finite,
    Cover,
    Lipschitz,
    Discrete,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        Self::Lengthgen,
        Self::Compgen,
        Self::Failure,
        Self::Cot,
        Self::Nonrealizable,
        Self::Finite,
        Self::Cover,
        Self::Lipschitz,
        Self::Discrete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lengthgen => "lengthgen",
            Self::Compgen => "compgen",
            Self::Failure => "failure",
            Self::Cot => "cot",
            Self::Nonrealizable => "nonrealizable",
            Self::Finite => "finite",
            Self::Cover => "cover",
            Self::Lipschitz => "lipschitz",
            Self::Discrete => "discrete",
        }
    }

    /// Experiments that train students and report risk-vs-length curves.
    pub fn trains(self) -> bool {
        !matches!(self, Self::Finite | Self::Cover | Self::Lipschitz)
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// n = 4, T = 4, 2 epochs: every command finishes in seconds.
    Smoke,
    /// n = 8, T = 6, 40 epochs, 3 seeds.
    Desk,
    /// n = 20, T = 10, 100 epochs, 5 seeds.
    Paper,
}

/// Architecture knobs shared by teacher and student; dims and family live
/// on [`ExperimentConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ArchSettings {
    pub capacity: Capacity,
    pub psi_hidden: Vec<usize>,
    pub psi_output: Activation,
    pub omega_hidden: Vec<usize>,
    pub omega_output: Activation,
    pub attention: AttentionKind,
    pub normalization: Normalization,
    pub heads: usize,
    pub positional_tmax: Option<usize>,
    pub init_std: f64,
}

impl Default for ArchSettings {
    fn default() -> Self {
        Self::with_width(20)
    }
}

impl ArchSettings {
    /// Two sigmoid hidden layers of `width` and a perceptron output head.
    pub fn with_width(width: usize) -> Self {
        Self {
            capacity: Capacity::StructuredPerceptron,
            psi_hidden: vec![width, width],
            psi_output: Activation::Sigmoid,
            omega_hidden: vec![width, width],
            omega_output: Activation::Sigmoid,
            attention: AttentionKind::Sigmoid,
            normalization: Normalization::MeanOverI,
            heads: 1,
            positional_tmax: None,
            init_std: INIT_STD,
        }
    }

    pub fn spec(&self, family: Family, n: usize, m: usize, k: usize) -> ModelSpec {
        ModelSpec {
            family,
            n,
            m,
            k,
            capacity: self.capacity,
            psi_hidden: self.psi_hidden.clone(),
            psi_output: self.psi_output,
            omega_hidden: self.omega_hidden.clone(),
            omega_output: self.omega_output,
            attention: self.attention,
            normalization: self.normalization,
            heads: self.heads,
            positional_tmax: self.positional_tmax,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalSettings {
    /// Sequences per length for the risk estimate.
    pub samples: usize,
    /// Held-out sequences for the identification fit; 0 disables it.
    pub r2_samples: usize,
    /// Probe sequences for RNN permutation recovery.
    pub perm_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            samples: 10_000,
            r2_samples: 1000,
            perm_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct CompgenSettings {
    pub halfwidth: f64,
}

impl Default for CompgenSettings {
    fn default() -> Self {
        Self {
            halfwidth: DistributionKind::BAND_HALFWIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiscreteSettings {
    pub levels: usize,
}

impl Default for DiscreteSettings {
    fn default() -> Self {
        Self { levels: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FailureSettings {
    /// Constant added to every label component beyond the threshold.
    pub offset: f64,
    /// `T₀`: the degenerate branch fires for `t > T₀`.
    pub threshold: usize,
}

impl Default for FailureSettings {
    fn default() -> Self {
        Self {
            offset: 0.2,
            threshold: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct NonrealizableSettings {
    /// The far length is `factor · train-t`.
    pub factor: usize,
    /// Also train a student of the teacher's own family.
    pub control: bool,
    /// A seed counts as diverging when the far/near risk ratio reaches this.
    pub divergence_ratio: f64,
}

impl Default for NonrealizableSettings {
    fn default() -> Self {
        Self {
            factor: 5,
            control: true,
            divergence_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FiniteSettings {
    pub lambdas: Vec<f64>,
    pub bs: Vec<f64>,
    /// Readout weights; empty means the readout is fixed to 1.
    pub ws: Vec<f64>,
    pub teacher: Vec<f64>,
    pub tolerance: f64,
    pub horizon: usize,
    pub train_len: usize,
}

impl Default for FiniteSettings {
    fn default() -> Self {
        Self {
            lambdas: vec![0.0, 0.5],
            bs: vec![1.0],
            ws: Vec::new(),
            teacher: vec![0.5, 1.0],
            tolerance: 1e-12,
            horizon: 200,
            train_len: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct CoverSettings {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub epsilon: f64,
    /// Parameter Lipschitz constant of the scalar SSM on the box.
    pub lipschitz: f64,
    pub teacher: Vec<f64>,
    pub horizon: usize,
    pub max_points: usize,
}

impl Default for CoverSettings {
    fn default() -> Self {
        Self {
            lower: vec![0.0, 0.5],
            upper: vec![0.5, 1.0],
            epsilon: 0.1,
            lipschitz: 20f64.sqrt(),
            teacher: vec![0.3, 0.8],
            horizon: 200,
            max_points: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct LipschitzSettings {
    pub trials: usize,
    pub rnn: RnnProbe,
    pub transformer: TransformerProbe,
}

impl Default for LipschitzSettings {
    fn default() -> Self {
        Self {
            trials: 1000,
            rnn: RnnProbe::default(),
            transformer: TransformerProbe::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub scale: Scale,
    /// Teacher family (and student family unless `student-family` is set).
    pub family: Family,
    pub student_family: Option<Family>,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub train_t: usize,
    pub eval_lengths: Vec<usize>,
    /// Number of seeds; seed `i` is `seed + i`.
    pub seeds: usize,
    pub seed: u64,
    /// Not part of the hash: where a run lands does not change what it computes.
    pub output_dir: Option<PathBuf>,
    pub teacher: ArchSettings,
    pub student: ArchSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
    pub compgen: CompgenSettings,
    pub discrete: DiscreteSettings,
    pub failure: FailureSettings,
    pub nonrealizable: NonrealizableSettings,
    pub finite: FiniteSettings,
    pub cover: CoverSettings,
    pub lipschitz: LipschitzSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(ExperimentKind::Lengthgen, Scale::Paper, Family::DeepSet)
    }
}

impl ExperimentConfig {
    /// Default configuration for an experiment at a scale.
    pub fn preset(experiment: ExperimentKind, scale: Scale, family: Family) -> Self {
        let (dim, train_t, seeds) = match scale {
            Scale::Smoke => (4, 4, 2),
            Scale::Desk => (8, 6, 3),
            Scale::Paper => (20, 10, 5),
        };
        let train = match scale {
            Scale::Smoke => TrainConfig {
                epochs: 2,
                batch_size: 64,
                batches_per_epoch: 10,
                validation_batches: 2,
                ..TrainConfig::default()
            },
            Scale::Desk => TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
            Scale::Paper => TrainConfig::default(),
        };
        let eval = match scale {
            Scale::Smoke => EvalSettings {
                samples: 500,
                r2_samples: 200,
                perm_samples: 100,
            },
            Scale::Desk => EvalSettings {
                samples: 4000,
                r2_samples: 2000,
                perm_samples: 500,
            },
            Scale::Paper => EvalSettings::default(),
        };
        let mut arch = ArchSettings::with_width(dim);
        if scale == Scale::Paper {
            arch.capacity = Capacity::StructuredDiffeo;
        }
        let eval_lengths = match scale {
            Scale::Smoke => vec![4, 8, 16],
            Scale::Desk => vec![6, 12, 30, 60],
            Scale::Paper => vec![10, 20, 50, 100],
        };
        let mut cfg = Self {
            experiment,
            scale,
            family,
            student_family: None,
            n: dim,
            m: dim,
            k: dim,
            train_t,
            eval_lengths,
            seeds,
            seed: 1,
            output_dir: None,
            teacher: arch.clone(),
            student: arch,
            train,
            eval,
            compgen: CompgenSettings::default(),
            discrete: DiscreteSettings::default(),
            failure: FailureSettings::default(),
            nonrealizable: NonrealizableSettings::default(),
            finite: FiniteSettings::default(),
            cover: CoverSettings::default(),
            lipschitz: LipschitzSettings::default(),
        };
        match experiment {
            ExperimentKind::Compgen => cfg.eval_lengths = vec![train_t],
            ExperimentKind::Failure => {
                // small high-capacity teacher with an identity output so the
                // offset branch is not squashed; deeper students
                cfg.teacher.capacity = Capacity::HighCapacity;
                cfg.teacher.psi_hidden = vec![dim];
                cfg.teacher.omega_hidden = vec![dim];
                cfg.teacher.omega_output = Activation::Identity;
                cfg.student = cfg.teacher.clone();
                cfg.student.psi_hidden = vec![dim, dim];
                cfg.student.omega_hidden = vec![dim, dim];
                if family == Family::Transformer {
                    cfg.failure = FailureSettings {
                        offset: 0.1,
                        threshold: 10,
                    };
                    cfg.student.omega_hidden = vec![dim, dim, dim];
                } else if scale == Scale::Desk {
                    cfg.train.epochs = 100;
                }
                if scale == Scale::Smoke {
                    cfg.failure.threshold = 3;
                }
                cfg.train_t = cfg.failure.threshold - 1;
                cfg.eval_lengths = (1..=2 * cfg.failure.threshold).collect();
            }
            ExperimentKind::Cot => {
                cfg.family = family;
                cfg.teacher.capacity = Capacity::HighCapacity;
                cfg.student.capacity = Capacity::HighCapacity;
                cfg.eval_lengths = vec![train_t, 2 * train_t, 5 * train_t];
            }
            ExperimentKind::Nonrealizable => {
                cfg.student_family = Some(if family == Family::DeepSet {
                    Family::Rnn
                } else {
                    Family::DeepSet
                });
                cfg.eval_lengths = vec![train_t, 2 * train_t, 5 * train_t];
            }
            ExperimentKind::Finite if scale == Scale::Smoke => cfg.finite.horizon = 50,
            ExperimentKind::Cover if scale == Scale::Smoke => {
                cfg.cover.epsilon = 0.2;
                cfg.cover.horizon = 50;
            }
            ExperimentKind::Lipschitz if scale == Scale::Smoke => {
                cfg.lipschitz.trials = 50;
                cfg.lipschitz.rnn.horizon = 20;
                cfg.lipschitz.transformer.horizon = 20;
            }
            _ => {}
        }
        cfg
    }

    /// Preset for the scale and family named in `text` (or the fallbacks),
    /// overlaid with every field `text` sets.
    pub fn from_toml_str(text: &str, experiment: ExperimentKind, scale: Option<Scale>) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let named = |key: &str| file.get(key).and_then(|v| v.as_str()).map(str::to_owned);
        if let Some(kind) = named("experiment") {
            if kind != experiment.name() {
                return Err(HarnessError::Config(format!(
                    "config is for experiment {kind:?} but {experiment} was requested"
                )));
            }
        }
        let scale = match scale {
            Some(s) => s,
            None => match named("scale") {
                Some(s) => parse_value::<Scale>(&s, "scale")?,
                None => Scale::Desk,
            },
        };
        let family = match named("family") {
            Some(f) => parse_value::<Family>(&f, "family")?,
            None => Self::default_family(experiment),
        };
        let base = Self::preset(experiment, scale, family);
        let mut merged = toml::Table::try_from(&base).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut overlay = file;
        overlay.insert("scale".into(), toml::Value::String(scale_name(scale).into()));
        merge(&mut merged, overlay);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, experiment: ExperimentKind, scale: Option<Scale>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text, experiment, scale)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    pub fn default_family(experiment: ExperimentKind) -> Family {
        match experiment {
            ExperimentKind::Cot => Family::Ssm,
            ExperimentKind::Nonrealizable => Family::Rnn,
            _ => Family::DeepSet,
        }
    }

    /// Fills derived fields and checks invariants.
    pub fn finalize(mut self) -> Result<Self> {
        if self.seeds == 0 {
            return Err(HarnessError::Config("seeds must be >= 1".into()));
        }
        if self.n == 0 || self.m == 0 || self.k == 0 || self.train_t == 0 {
            return Err(HarnessError::Config("dims and train-t must be >= 1".into()));
        }
        if self.experiment.trains() {
            if self.experiment != ExperimentKind::Failure {
                self.eval_lengths.push(self.train_t);
            }
            if self.experiment == ExperimentKind::Nonrealizable {
                self.eval_lengths.push(self.nonrealizable.factor * self.train_t);
            }
            self.eval_lengths.sort_unstable();
            self.eval_lengths.dedup();
            if self.eval_lengths.is_empty() || self.eval_lengths[0] == 0 {
                return Err(HarnessError::Config("eval-lengths must be non-empty and >= 1".into()));
            }
            self.train.validate()?;
        }
        match self.experiment {
            ExperimentKind::Failure if self.failure.threshold < 2 => {
                return Err(HarnessError::Config("failure threshold must be >= 2".into()));
            }
            ExperimentKind::Nonrealizable => {
                let student = self.student_family.unwrap_or(self.family);
                if student == self.family && self.student == self.teacher {
                    return Err(HarnessError::Config(
                        "non-realizable run needs a student family or architecture that differs from the teacher".into(),
                    ));
                }
                if self.nonrealizable.factor < 2 {
                    return Err(HarnessError::Config("nonrealizable factor must be >= 2".into()));
                }
            }
            ExperimentKind::Discrete if self.discrete.levels < 2 => {
                return Err(HarnessError::Config("discrete levels must be >= 2".into()));
            }
            _ => {}
        }
        Ok(self)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn teacher_spec(&self) -> ModelSpec {
        self.teacher.spec(self.family, self.n, self.m, self.k)
    }

    pub fn student_spec(&self) -> ModelSpec {
        self.student.spec(self.student_family.unwrap_or(self.family), self.n, self.m, self.k)
    }

    /// Training distribution at `train-t`.
    pub fn train_distribution(&self) -> DistributionSpec {
        let kind = match self.experiment {
            ExperimentKind::Compgen => DistributionKind::CompositionalBand {
                halfwidth: self.compgen.halfwidth,
            },
            ExperimentKind::Discrete => DistributionKind::DiscreteGrid {
                levels: self.discrete.levels,
            },
            _ => DistributionKind::UniformHypercube,
        };
        DistributionSpec::new(kind, self.n, self.train_t)
    }

    /// SHA-256 of the canonical JSON form (object keys sorted), excluding
    /// the output directory.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = None;
        let value = serde_json::to_value(&canon).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// One-line description for plot titles.
    pub fn summary(&self) -> String {
        let family = match self.student_family {
            Some(s) if s != self.family => format!("{} teacher, {s} student", self.family),
            _ => self.family.to_string(),
        };
        format!(
            "{} | {family} | n={} m={} k={} T={} | {} seeds | {} epochs",
            self.experiment, self.n, self.m, self.k, self.train_t, self.seeds, self.train.epochs
        )
    }
}

fn scale_name(scale: Scale) -> &'static str {
    match scale {
        Scale::Smoke => "smoke",
        Scale::Desk => "desk",
        Scale::Paper => "paper",
    }
}

fn parse_value<T: for<'de> Deserialize<'de>>(s: &str, what: &str) -> Result<T> {
    T::deserialize(toml::Value::String(s.into()))
        .map_err(|e| HarnessError::Config(format!("bad {what} {s:?}: {e}")))
}

/// Recursive table overlay: scalars and arrays in `top` replace those in `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
