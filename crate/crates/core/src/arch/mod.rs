//! The four structured sequence families, their high-capacity variants and
//! the offset teachers used to exhibit non-generalizing risk minimizers.
//!
//! Every family runs on any [`Backend`]: on a [`crate::numerics::Tape`] for
//! training, on [`Eager`] for evaluation at long lengths. Tokens are passed as
//! one `batch × n` matrix per position and every forward returns, per
//! position, the labels and the hidden representation that the
//! identification metrics and CoT supervision use:
//!
//! | family      | hidden representation          |
//! |-------------|--------------------------------|
//! | deep set    | prefix sum `Σ_{j≤i} ψ(x_j)`    |
//! | transformer | attention aggregate before `ω` |
//! | SSM / RNN   | state `h_t`                    |

mod deepset;
mod mlp;
mod rnn;
mod ssm;
mod transformer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use deepset::DeepSetModel;
pub use mlp::{Activation, Dense, Elementwise, Map, MapVars, Mlp, MlpSpec};
pub use rnn::RnnModel;
pub use ssm::SsmModel;
pub use transformer::{AttentionHead, AttentionKind, Normalization, Positional, TransformerModel};

use crate::error::{Error, Result};
use crate::numerics::{random_normal, random_orthogonal, Backend, Eager, Matrix, RngStream};

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    DeepSet,
    Transformer,
    Ssm,
    Rnn,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::DeepSet, Family::Transformer, Family::Ssm, Family::Rnn];

    pub fn name(self) -> &'static str {
        match self {
            Family::DeepSet => "deep-set",
            Family::Transformer => "transformer",
            Family::Ssm => "ssm",
            Family::Rnn => "rnn",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown family {s:?}")))
    }
}

/// How much freedom the output map `ω` has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Capacity {
    /// `ω` is one affine layer followed by a sigmoid.
    StructuredPerceptron,
    /// `ω` maps `ℝᵐ → ℝᵐ` (square; intended to be a diffeomorphism).
    StructuredDiffeo,
    /// No constraint on `ω` or `ψ`.
    HighCapacity,
}

impl Capacity {
    pub fn is_structured(self) -> bool {
        self != Capacity::HighCapacity
    }

    pub(crate) fn check_omega(self, omega: &Map) -> Result<()> {
        match self {
            Capacity::StructuredPerceptron => match omega {
                Map::Mlp(m)
                    if m.spec.hidden.is_empty()
                        && m.spec.output_activation == Activation::Sigmoid =>
                {
                    Ok(())
                }
                _ => Err(Error::Config(
                    "structured-perceptron ω must be a single affine layer with a sigmoid".into(),
                )),
            },
            Capacity::StructuredDiffeo if omega.in_dim() != omega.out_dim() => Err(Error::Config(
                format!(
                    "structured-diffeo ω must be square, got {} -> {}",
                    omega.in_dim(),
                    omega.out_dim()
                ),
            )),
            _ => Ok(()),
        }
    }
}

/// Per-position outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct Trace<V> {
    /// `batch × m` label prediction for each prefix length.
    pub labels: Vec<V>,
    /// `batch × k` hidden representation for each prefix length.
    pub hidden: Vec<V>,
}

impl<V> Trace<V> {
    pub fn with_capacity(t: usize) -> Self {
        Self {
            labels: Vec::with_capacity(t),
            hidden: Vec::with_capacity(t),
        }
    }
}

/// A teacher equal to `base` up to length `threshold` and `base + offset`
/// beyond it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateTeacher {
    pub base: Box<Model>,
    pub offset: Vec<f64>,
    pub threshold: usize,
}

/// Wraps `base` so labels at positions `t > threshold` are shifted by `c`.
/// A one-element `c` is broadcast over all label dims.
pub fn make_degenerate(base: Model, c: &[f64], threshold: usize) -> Result<Model> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("offset must be finite".into()));
    }
    let m = base.out_dim();
    let offset = match c.len() {
        1 => vec![c[0]; m],
        len if len == m => c.to_vec(),
        len => {
            return Err(Error::Config(format!(
                "offset has {len} entries, labels have {m}"
            )))
        }
    };
    Ok(Model::Degenerate(DegenerateTeacher {
        base: Box::new(base),
        offset,
        threshold,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Model {
    DeepSet(DeepSetModel),
    Transformer(TransformerModel),
    Ssm(SsmModel),
    Rnn(RnnModel),
    Degenerate(DegenerateTeacher),
}

impl Model {
    /// Family of the underlying architecture (degenerate teachers report their base).
    pub fn family(&self) -> Family {
        match self {
            Model::DeepSet(_) => Family::DeepSet,
            Model::Transformer(_) => Family::Transformer,
            Model::Ssm(_) => Family::Ssm,
            Model::Rnn(_) => Family::Rnn,
            Model::Degenerate(d) => d.base.family(),
        }
    }

    pub fn capacity(&self) -> Capacity {
        match self {
            Model::DeepSet(m) => m.capacity,
            Model::Transformer(m) => m.capacity,
            Model::Ssm(m) => m.capacity,
            Model::Rnn(m) => m.capacity,
            Model::Degenerate(_) => Capacity::HighCapacity,
        }
    }

    pub fn token_dim(&self) -> usize {
        match self {
            Model::DeepSet(m) => m.psi.in_dim(),
            Model::Transformer(m) => m.token_dim(),
            Model::Ssm(m) => m.b_in.cols(),
            Model::Rnn(m) => m.b_in.cols(),
            Model::Degenerate(d) => d.base.token_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Model::DeepSet(m) => m.omega.out_dim(),
            Model::Transformer(m) => m.omega.out_dim(),
            Model::Ssm(m) => m.omega.out_dim(),
            Model::Rnn(m) => m.a_out.rows(),
            Model::Degenerate(d) => d.base.out_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Model::DeepSet(m) => m.psi.out_dim(),
            Model::Transformer(m) => m.key_dim(),
            Model::Ssm(m) => m.state_dim(),
            Model::Rnn(m) => m.state_dim(),
            Model::Degenerate(d) => d.base.hidden_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::DeepSet(m) => {
                DeepSetModel::new(m.psi.clone(), m.omega.clone(), m.capacity).map(|_| ())
            }
            Model::Transformer(m) => m.validate(),
            Model::Ssm(m) => m.validate(),
            Model::Rnn(m) => m.validate(),
            Model::Degenerate(d) => {
                if d.offset.len() != d.base.out_dim() {
                    return Err(Error::Config("offset length must match label dim".into()));
                }
                d.base.validate()
            }
        }
    }

    /// Parameters in the order a forward pass registers them with a backend.
    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            Model::DeepSet(m) => m.params(),
            Model::Transformer(m) => m.params(),
            Model::Ssm(m) => m.params(),
            Model::Rnn(m) => m.params(),
            Model::Degenerate(d) => d.base.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Model::DeepSet(m) => m.params_mut(),
            Model::Transformer(m) => m.params_mut(),
            Model::Ssm(m) => m.params_mut(),
            Model::Rnn(m) => m.params_mut(),
            Model::Degenerate(d) => d.base.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.as_mut_slice().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Runs the model over `tokens` (one `batch × n` matrix per position).
    pub fn forward<B: Backend>(&self, b: &mut B, tokens: &[B::Value]) -> Result<Trace<B::Value>> {
        let n = self.token_dim();
        for (t, x) in tokens.iter().enumerate() {
            let cols = b.value(x).cols();
            if cols != n {
                return Err(Error::Shape(format!(
                    "token at position {} has {cols} dims, model expects {n}",
                    t + 1
                )));
            }
        }
        match self {
            Model::DeepSet(m) => m.forward(b, tokens),
            Model::Transformer(m) => m.forward(b, tokens),
            Model::Ssm(m) => m.forward(b, tokens),
            Model::Rnn(m) => m.forward(b, tokens),
            Model::Degenerate(d) => {
                let mut trace = d.base.forward(b, tokens)?;
                let shift = b.constant(Matrix::row_vector(&d.offset));
                for (t, label) in trace.labels.iter_mut().enumerate() {
                    if t + 1 > d.threshold {
                        *label = b.add_row(label, &shift)?;
                    }
                }
                Ok(trace)
            }
        }
    }

    /// Value-only forward pass.
    pub fn run(&self, tokens: &[Matrix]) -> Result<Trace<Matrix>> {
        self.forward(&mut Eager, tokens)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const MODEL_FORMAT: &str = "lengen-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: Model,
}

/// Architecture description used to sample teachers and students.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ModelSpec {
    pub family: Family,
    /// Token dim.
    pub n: usize,
    /// Label dim.
    pub m: usize,
    /// Hidden dim.
    pub k: usize,
    pub capacity: Capacity,
    /// Hidden widths of the deep-set `ψ` MLP.
    pub psi_hidden: Vec<usize>,
    pub psi_output: Activation,
    /// Hidden widths of `ω` (ignored for perceptron `ω` and for RNNs).
    pub omega_hidden: Vec<usize>,
    pub omega_output: Activation,
    pub attention: AttentionKind,
    pub normalization: Normalization,
    pub heads: usize,
    pub positional_tmax: Option<usize>,
    pub init_std: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(Family::DeepSet, 20)
    }
}

impl ModelSpec {
    /// Two sigmoid hidden layers of width `dim` everywhere and `n = m = k = dim`.
    pub fn new(family: Family, dim: usize) -> Self {
        Self {
            family,
            n: dim,
            m: dim,
            k: dim,
            capacity: Capacity::StructuredDiffeo,
            psi_hidden: vec![dim, dim],
            psi_output: Activation::Sigmoid,
            omega_hidden: vec![dim, dim],
            omega_output: Activation::Sigmoid,
            attention: AttentionKind::Sigmoid,
            normalization: Normalization::MeanOverI,
            heads: 1,
            positional_tmax: None,
            init_std: INIT_STD,
        }
    }

    fn omega(&self, rng: &mut RngStream) -> Result<Map> {
        let spec = if self.capacity == Capacity::StructuredPerceptron {
            MlpSpec::perceptron(self.k, self.m)
        } else {
            MlpSpec::new(self.k, self.m, self.omega_hidden.clone()).with_output(self.omega_output)
        };
        Ok(Map::Mlp(Mlp::sample(spec, self.init_std, rng)?))
    }

    /// Draws a model: Gaussian MLP and attention weights, random
    /// (semi-)orthogonal recurrence, input and readout matrices.
    pub fn sample(&self, rng: &mut RngStream) -> Result<Model> {
        if self.n == 0 || self.m == 0 || self.k == 0 {
            return Err(Error::Config("dims must be >= 1".into()));
        }
        let std = self.init_std;
        let model = match self.family {
            Family::DeepSet => {
                let psi = Mlp::sample(
                    MlpSpec::new(self.n, self.k, self.psi_hidden.clone()).with_output(self.psi_output),
                    std,
                    &mut rng.child("psi"),
                )?;
                let omega = self.omega(&mut rng.child("omega"))?;
                Model::DeepSet(DeepSetModel::new(Map::Mlp(psi), omega, self.capacity)?)
            }
            Family::Transformer => {
                let heads_n = self.heads.max(1);
                let mut r = rng.child("attention");
                let heads = (0..heads_n)
                    .map(|_| AttentionHead {
                        wq: random_normal(self.k, self.n, 0.0, std, &mut r),
                        wk: random_normal(self.k, self.n, 0.0, std, &mut r),
                        wv: random_normal(self.k, self.n, 0.0, std, &mut r),
                    })
                    .collect();
                let mixing = if heads_n > 1 {
                    (0..heads_n)
                        .map(|_| random_normal(self.k, self.k, 0.0, std / (heads_n as f64).sqrt(), &mut r))
                        .collect()
                } else {
                    Vec::new()
                };
                let positional = self.positional_tmax.map(|tmax| Positional {
                    bias: (0..tmax)
                        .map(|_| random_normal(1, 1, 0.0, std, &mut r))
                        .collect(),
                });
                let m = TransformerModel {
                    heads,
                    mixing,
                    attention: self.attention,
                    normalization: self.normalization,
                    positional,
                    omega: self.omega(&mut rng.child("omega"))?,
                    capacity: self.capacity,
                };
                m.validate()?;
                Model::Transformer(m)
            }
            Family::Ssm => {
                let mut r = rng.child("recurrence");
                let lambda = random_orthogonal(self.k, &mut r);
                let b_in = semi_orthogonal(self.k, self.n, &mut r);
                Model::Ssm(SsmModel::new(
                    lambda,
                    b_in,
                    self.omega(&mut rng.child("omega"))?,
                    self.capacity,
                )?)
            }
            Family::Rnn => {
                let mut r = rng.child("recurrence");
                let lambda = random_orthogonal(self.k, &mut r);
                let b_in = semi_orthogonal(self.k, self.n, &mut r);
                let a_out = semi_orthogonal(self.m, self.k, &mut r);
                Model::Rnn(RnnModel::new(lambda, b_in, a_out, self.capacity)?)
            }
        };
        Ok(model)
    }
}

/// Samples a teacher deterministically from `seed`.
pub fn sample_teacher(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.sample(&mut RngStream::new(seed, "teacher"))
}

/// Samples a student deterministically from `seed`, independent of any teacher stream.
pub fn sample_student(spec: &ModelSpec, seed: u64) -> Result<Model> {
    spec.sample(&mut RngStream::new(seed, "student"))
}

/// `rows × cols` block of a random orthogonal matrix: orthonormal rows or
/// columns, whichever is shorter.
fn semi_orthogonal(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let n = rows.max(cols);
    let q = random_orthogonal(n, rng);
    if rows == cols {
        return q;
    }
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            out[(r, c)] = q[(r, c)];
        }
    }
    out
}
