use serde::{Deserialize, Serialize};

use super::{Capacity, Map, Trace};
use crate::error::{Error, Result};
use crate::numerics::{Backend, Matrix};

/// Scalar nonlinearity applied to `qᵀk/√d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    Sigmoid,
    Relu,
    Linear,
    /// Normalizes over keys instead of dividing by the position count.
    /// Outside the decomposable attention family; results carry no guarantee.
    Softmax,
}

/// Which keys position `i` attends to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `(1/i) Σ_{j≤i}`
    MeanOverI,
    /// `(1/(i−1)) Σ_{j<i}`; the aggregate at `i = 1` is the zero vector.
    MeanOverPrevious,
}

/// One attention head; each matrix is `k × n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

/// Relative-position kernels: a learned logit offset for each distance
/// `0..tmax`. Pairs at distance `≥ tmax` contribute exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Positional {
    pub bias: Vec<Matrix>,
}

impl Positional {
    pub fn tmax(&self) -> usize {
        self.bias.len()
    }
}

/// `y_i = ω(z_i)` with `z_i = (1/N_i) Σ_j ψ(x_i, x_j)` and
/// `ψ(x_i, x_j) = a(q_iᵀk_j/√d)·v_j`.
///
/// With several heads the per-head aggregates are concatenated and mixed by
/// `mixing` (stored as one `k × k` block per head).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerModel {
    pub heads: Vec<AttentionHead>,
    pub mixing: Vec<Matrix>,
    pub attention: AttentionKind,
    pub normalization: Normalization,
    pub positional: Option<Positional>,
    pub omega: Map,
    pub capacity: Capacity,
}

struct HeadVars<V> {
    wq: V,
    wk: V,
    wv: V,
}

impl TransformerModel {
    pub fn validate(&self) -> Result<()> {
        let first = self
            .heads
            .first()
            .ok_or_else(|| Error::Config("transformer needs at least one head".into()))?;
        let (k, n) = first.wq.shape();
        for h in &self.heads {
            if h.wq.shape() != (k, n) || h.wk.shape() != (k, n) || h.wv.shape() != (k, n) {
                return Err(Error::Config("attention matrices must all be k×n".into()));
            }
        }
        if self.heads.len() > 1 {
            if self.mixing.len() != self.heads.len()
                || self.mixing.iter().any(|m| m.shape() != (k, k))
            {
                return Err(Error::Config("need one k×k mixing block per head".into()));
            }
        } else if !self.mixing.is_empty() {
            return Err(Error::Config("mixing is only used with several heads".into()));
        }
        if let Some(p) = &self.positional {
            if p.bias.is_empty() || p.bias.iter().any(|b| b.shape() != (1, 1)) {
                return Err(Error::Config("positional kernels need tmax >= 1 scalars".into()));
            }
        }
        if self.omega.in_dim() != k {
            return Err(Error::Config(format!(
                "ω takes {} dims but attention produces {k}",
                self.omega.in_dim()
            )));
        }
        self.capacity.check_omega(&self.omega)
    }

    pub fn token_dim(&self) -> usize {
        self.heads[0].wq.cols()
    }

    pub fn key_dim(&self) -> usize {
        self.heads[0].wq.rows()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p: Vec<&Matrix> = self
            .heads
            .iter()
            .flat_map(|h| [&h.wq, &h.wk, &h.wv])
            .collect();
        p.extend(self.mixing.iter());
        if let Some(pos) = &self.positional {
            p.extend(pos.bias.iter());
        }
        p.extend(self.omega.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p: Vec<&mut Matrix> = self
            .heads
            .iter_mut()
            .flat_map(|h| [&mut h.wq, &mut h.wk, &mut h.wv])
            .collect();
        p.extend(self.mixing.iter_mut());
        if let Some(pos) = &mut self.positional {
            p.extend(pos.bias.iter_mut());
        }
        p.extend(self.omega.params_mut());
        p
    }

    pub fn forward<B: Backend>(&self, b: &mut B, tokens: &[B::Value]) -> Result<Trace<B::Value>> {
        let heads: Vec<HeadVars<B::Value>> = self
            .heads
            .iter()
            .map(|h| HeadVars {
                wq: b.param(&h.wq),
                wk: b.param(&h.wk),
                wv: b.param(&h.wv),
            })
            .collect();
        let mixing: Vec<B::Value> = self.mixing.iter().map(|m| b.param(m)).collect();
        let pos_bias: Vec<B::Value> = self
            .positional
            .as_ref()
            .map(|p| p.bias.iter().map(|m| b.param(m)).collect())
            .unwrap_or_default();
        let omega = self.omega.bind(b);

        let k = self.key_dim();
        let inv_sqrt_d = 1.0 / (k as f64).sqrt();
        let mut trace = Trace::with_capacity(tokens.len());
        let Some(first) = tokens.first() else {
            return Ok(trace);
        };
        let batch = b.value(first).rows();

        // q, k, v for every (head, position)
        let mut proj = Vec::with_capacity(heads.len());
        for h in &heads {
            let mut per_t = Vec::with_capacity(tokens.len());
            for x in tokens {
                per_t.push((
                    b.matmul_t(x, &h.wq)?,
                    b.matmul_t(x, &h.wk)?,
                    b.matmul_t(x, &h.wv)?,
                ));
            }
            proj.push(per_t);
        }

        for i in 0..tokens.len() {
            let keys: Vec<usize> = match self.normalization {
                Normalization::MeanOverI => (0..=i).collect(),
                Normalization::MeanOverPrevious => (0..i).collect(),
            };
            let z = if keys.is_empty() {
                b.constant(Matrix::zeros(batch, k))
            } else {
                let mut per_head = Vec::with_capacity(heads.len());
                for p in &proj {
                    per_head.push(self.aggregate(b, p, i, &keys, &pos_bias, inv_sqrt_d, batch, k)?);
                }
                if per_head.len() == 1 {
                    per_head.pop().expect("one head")
                } else {
                    let mut mixed: Option<B::Value> = None;
                    for (zh, m) in per_head.iter().zip(&mixing) {
                        let term = b.matmul_t(zh, m)?;
                        mixed = Some(match mixed {
                            Some(acc) => b.add(&acc, &term)?,
                            None => term,
                        });
                    }
                    mixed.expect("several heads")
                }
            };
            trace.labels.push(omega.apply(b, &z)?);
            trace.hidden.push(z);
        }
        Ok(trace)
    }

    #[allow(clippy::too_many_arguments)]
    fn aggregate<B: Backend>(
        &self,
        b: &mut B,
        proj: &[(B::Value, B::Value, B::Value)],
        i: usize,
        keys: &[usize],
        pos_bias: &[B::Value],
        inv_sqrt_d: f64,
        batch: usize,
        k: usize,
    ) -> Result<B::Value> {
        let q = &proj[i].0;
        let mut num: Option<B::Value> = None;
        let mut den: Option<B::Value> = None;
        for &j in keys {
            let dist = i - j;
            if self.positional.is_some() && dist >= pos_bias.len() {
                continue;
            }
            let qk = b.mul(q, &proj[j].1)?;
            let qk = b.row_sum(&qk);
            let mut score = b.scale(&qk, inv_sqrt_d);
            if self.positional.is_some() {
                score = b.add_row(&score, &pos_bias[dist])?;
            }
            let weight = match self.attention {
                AttentionKind::Sigmoid => b.sigmoid(&score),
                AttentionKind::Relu => b.relu(&score),
                AttentionKind::Linear => score,
                AttentionKind::Softmax => b.exp(&score),
            };
            let term = b.mul_col(&proj[j].2, &weight)?;
            num = Some(match num {
                Some(acc) => b.add(&acc, &term)?,
                None => term,
            });
            if self.attention == AttentionKind::Softmax {
                den = Some(match den {
                    Some(acc) => b.add(&acc, &weight)?,
                    None => weight,
                });
            }
        }
        let Some(num) = num else {
            return Ok(b.constant(Matrix::zeros(batch, k)));
        };
        Ok(match den {
            Some(den) => {
                let inv = b.recip(&den);
                b.mul_col(&num, &inv)?
            }
            None => b.scale(&num, 1.0 / keys.len() as f64),
        })
    }
}
