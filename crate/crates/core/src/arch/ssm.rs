use serde::{Deserialize, Serialize};

use super::{Capacity, Map, Trace};
use crate::error::{Error, Result};
use crate::numerics::{Backend, Matrix};

/// Linear state-space model: `h_t = Λ h_{t−1} + B x_t`, `y_t = ω(h_t)`,
/// `h_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmModel {
    pub lambda: Matrix,
    pub b_in: Matrix,
    pub omega: Map,
    pub capacity: Capacity,
}

/// Structured recurrences must be comfortably invertible.
pub(crate) const MAX_CONDITION: f64 = 1e8;

impl SsmModel {
    pub fn new(lambda: Matrix, b_in: Matrix, omega: Map, capacity: Capacity) -> Result<Self> {
        let m = Self {
            lambda,
            b_in,
            omega,
            capacity,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.lambda.rows();
        if self.lambda.cols() != k || self.b_in.rows() != k {
            return Err(Error::Config(format!(
                "Λ is {:?} and B is {:?}; need k×k and k×n",
                self.lambda.shape(),
                self.b_in.shape()
            )));
        }
        if self.omega.in_dim() != k {
            return Err(Error::Config("ω input must match the state dim".into()));
        }
        if self.capacity.is_structured() {
            let (n, m) = (self.b_in.cols(), self.omega.out_dim());
            if n != k || m != k {
                return Err(Error::Config(format!(
                    "structured SSM needs m = k = n, got m={m} k={k} n={n}"
                )));
            }
            for (name, mat) in [("Λ", &self.lambda), ("B", &self.b_in)] {
                let c = mat.condition_number();
                if c > MAX_CONDITION {
                    return Err(Error::Config(format!(
                        "structured SSM needs invertible {name} (condition number {c:e})"
                    )));
                }
            }
        }
        self.capacity.check_omega(&self.omega)
    }

    pub fn state_dim(&self) -> usize {
        self.lambda.rows()
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = vec![&self.lambda, &self.b_in];
        p.extend(self.omega.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = vec![&mut self.lambda, &mut self.b_in];
        p.extend(self.omega.params_mut());
        p
    }

    pub fn forward<B: Backend>(&self, b: &mut B, tokens: &[B::Value]) -> Result<Trace<B::Value>> {
        let lambda = b.param(&self.lambda);
        let b_in = b.param(&self.b_in);
        let omega = self.omega.bind(b);
        let mut trace = Trace::with_capacity(tokens.len());
        let mut h: Option<B::Value> = None;
        for x in tokens {
            let drive = b.matmul_t(x, &b_in)?;
            let next = match &h {
                Some(prev) => {
                    let carried = b.matmul_t(prev, &lambda)?;
                    b.add(&carried, &drive)?
                }
                None => drive,
            };
            trace.labels.push(omega.apply(b, &next)?);
            trace.hidden.push(next.clone());
            h = Some(next);
        }
        Ok(trace)
    }
}
