use serde::{Deserialize, Serialize};

use super::{Capacity, Map, Trace};
use crate::error::{Error, Result};
use crate::numerics::{Backend, Matrix};

/// `y_i = ω(Σ_{j≤i} ψ(x_j))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSetModel {
    pub psi: Map,
    pub omega: Map,
    pub capacity: Capacity,
}

impl DeepSetModel {
    pub fn new(psi: Map, omega: Map, capacity: Capacity) -> Result<Self> {
        if psi.out_dim() != omega.in_dim() {
            return Err(Error::Config(format!(
                "ψ outputs {} dims but ω takes {}",
                psi.out_dim(),
                omega.in_dim()
            )));
        }
        capacity.check_omega(&omega)?;
        Ok(Self {
            psi,
            omega,
            capacity,
        })
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut p = self.psi.params();
        p.extend(self.omega.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.psi.params_mut();
        p.extend(self.omega.params_mut());
        p
    }

    pub fn forward<B: Backend>(&self, b: &mut B, tokens: &[B::Value]) -> Result<Trace<B::Value>> {
        let psi = self.psi.bind(b);
        let omega = self.omega.bind(b);
        let mut trace = Trace::with_capacity(tokens.len());
        let mut sum: Option<B::Value> = None;
        for x in tokens {
            let p = psi.apply(b, x)?;
            let s = match &sum {
                Some(prev) => b.add(prev, &p)?,
                None => p,
            };
            trace.labels.push(omega.apply(b, &s)?);
            trace.hidden.push(s.clone());
            sum = Some(s);
        }
        Ok(trace)
    }
}
