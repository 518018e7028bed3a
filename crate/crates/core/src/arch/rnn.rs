use serde::{Deserialize, Serialize};

use super::ssm::MAX_CONDITION;
use super::{Capacity, Trace};
use crate::error::{Error, Result};
use crate::numerics::{Backend, Matrix};

/// Vanilla RNN: `h_t = σ(Λ h_{t−1} + B x_t)`, `y_t = σ(A h_t)`, `h_0 = 0`,
/// with `σ` the logistic sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub lambda: Matrix,
    pub b_in: Matrix,
    pub a_out: Matrix,
    pub capacity: Capacity,
}

impl RnnModel {
    pub fn new(lambda: Matrix, b_in: Matrix, a_out: Matrix, capacity: Capacity) -> Result<Self> {
        let m = Self {
            lambda,
            b_in,
            a_out,
            capacity,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.lambda.rows();
        if self.lambda.cols() != k || self.b_in.rows() != k || self.a_out.cols() != k {
            return Err(Error::Config(format!(
                "Λ {:?}, B {:?}, A {:?} are inconsistent",
                self.lambda.shape(),
                self.b_in.shape(),
                self.a_out.shape()
            )));
        }
        if self.capacity.is_structured() {
            for (name, mat) in [("Λ", &self.lambda), ("B", &self.b_in), ("A", &self.a_out)] {
                if mat.rows() != mat.cols() {
                    return Err(Error::Config(format!("structured RNN needs square {name}")));
                }
                let c = mat.condition_number();
                if c > MAX_CONDITION {
                    return Err(Error::Config(format!(
                        "structured RNN needs invertible {name} (condition number {c:e})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.lambda.rows()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        vec![&self.lambda, &self.b_in, &self.a_out]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.lambda, &mut self.b_in, &mut self.a_out]
    }

    /// The same network with hidden units relabelled by `perm`
    /// (`(ΠᵀΛΠ, ΠᵀB, AΠ)` with `Π e_i = e_{perm[i]}`).
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.state_dim();
        let mut p = Matrix::zeros(k, k);
        for (i, &pi) in perm.iter().enumerate() {
            p[(pi, i)] = 1.0;
        }
        let pt = p.transpose();
        Ok(Self {
            lambda: pt.matmul(&self.lambda)?.matmul(&p)?,
            b_in: pt.matmul(&self.b_in)?,
            a_out: self.a_out.matmul(&p)?,
            capacity: self.capacity,
        })
    }

    pub fn forward<B: Backend>(&self, b: &mut B, tokens: &[B::Value]) -> Result<Trace<B::Value>> {
        let lambda = b.param(&self.lambda);
        let b_in = b.param(&self.b_in);
        let a_out = b.param(&self.a_out);
        let mut trace = Trace::with_capacity(tokens.len());
        let mut h: Option<B::Value> = None;
        for x in tokens {
            let drive = b.matmul_t(x, &b_in)?;
            let pre = match &h {
                Some(prev) => {
                    let carried = b.matmul_t(prev, &lambda)?;
                    b.add(&carried, &drive)?
                }
                None => drive,
            };
            let next = b.sigmoid(&pre);
            let out = b.matmul_t(&next, &a_out)?;
            trace.labels.push(b.sigmoid(&out));
            trace.hidden.push(next.clone());
            h = Some(next);
        }
        Ok(trace)
    }
}
