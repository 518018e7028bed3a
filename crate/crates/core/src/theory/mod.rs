//! Finite-class length thresholds, ε-cover constrained learning, parameter
//! Lipschitz bounds and the Rademacher complexity bound.

mod cover;
mod finite;
mod lipschitz;

pub use cover::{build_cover, constrained_survivors, survivor_sequence, CoverSpec, SurvivorTrace};
pub use finite::{finite_class_t0, FiniteClassReport, HypothesisGrid};
pub use lipschitz::{
    empirical_lipschitz_rnn, empirical_lipschitz_transformer, lipschitz_bound_rnn,
    lipschitz_bound_transformer_block, EmpiricalLipschitz, LipschitzConstants, RnnBound,
    RnnProbe, TransformerProbe,
};

use serde::{Deserialize, Serialize};

use crate::arch::{Activation, Capacity, Dense, Map, Mlp, MlpSpec, Model, SsmModel};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// `2c·√(ln N / (mT)) + ε`.
pub fn rademacher_bound(c: f64, cover_size: f64, m: usize, t: usize, epsilon: f64) -> Result<f64> {
    if cover_size < 1.0 || m == 0 || t == 0 {
        return Err(Error::Precondition(format!(
            "need N >= 1 and m, T >= 1 (got N={cover_size}, m={m}, T={t})"
        )));
    }
    Ok(2.0 * c * (cover_size.ln() / (m * t) as f64).sqrt() + epsilon)
}

/// Scalar linear SSM `h_t = λ h_{t−1} + b x_t`, `y_t = w h_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSsm {
    pub lambda: f64,
    pub b: f64,
    pub w: f64,
}

impl ScalarSsm {
    pub fn new(lambda: f64, b: f64) -> Self {
        Self { lambda, b, w: 1.0 }
    }

    pub fn from_params(p: &[f64]) -> Self {
        match *p {
            [lambda, b] => Self::new(lambda, b),
            [lambda, b, w] => Self { lambda, b, w },
            _ => panic!("scalar SSM takes (λ, b) or (λ, b, w)"),
        }
    }

    /// Exact `R̃(h, t)` against `teacher` for i.i.d. `Uniform[0,1]` tokens,
    /// for `t = 1..=horizon`.
    ///
    /// The prediction gap at length `t` is `Σ_j c_j x_{t−j}` with
    /// `c_j = wλʲb − w*λ*ʲb*`, whose second moment is `Σc_j²/12 + (Σc_j)²/4`.
    pub fn risk_profile(&self, teacher: &ScalarSsm, horizon: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(horizon);
        let (mut p, mut q) = (self.w * self.b, teacher.w * teacher.b);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..horizon {
            let c = p - q;
            sum += c;
            sum_sq += c * c;
            out.push(sum_sq / 12.0 + sum * sum / 4.0);
            p *= self.lambda;
            q *= teacher.lambda;
        }
        out
    }

    pub fn to_model(&self) -> Result<Model> {
        let omega = Mlp::from_layers(
            MlpSpec::perceptron(1, 1).with_output(Activation::Identity),
            vec![Dense {
                weight: Matrix::scalar(self.w),
                bias: Matrix::scalar(0.0),
            }],
        )?;
        Ok(Model::Ssm(SsmModel::new(
            Matrix::scalar(self.lambda),
            Matrix::scalar(self.b),
            Map::Mlp(omega),
            Capacity::HighCapacity,
        )?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rademacher_hand_values() {
        let b = rademacher_bound(1.0, std::f64::consts::E, 100, 10, 0.0).unwrap();
        assert!((b - 2.0 * (1.0f64 / 1000.0).sqrt()).abs() < 1e-15);
        assert!((b - 0.0632).abs() < 1e-4);
        assert_eq!(rademacher_bound(3.0, 1.0, 7, 2, 0.125).unwrap(), 0.125);
        assert!(rademacher_bound(1.0, 0.5, 1, 1, 0.0).is_err());
        let mut prev = f64::INFINITY;
        for m in 1..50 {
            let b = rademacher_bound(1.0, 10.0, m, 3, 0.0).unwrap();
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn scalar_risk_hand_values() {
        let teacher = ScalarSsm::new(0.5, 1.0);
        let r = ScalarSsm::new(0.0, 1.0).risk_profile(&teacher, 3);
        assert_eq!(r[0], 0.0);
        assert!((r[1] - 0.25 / 3.0).abs() < 1e-15);
        // c = (0, −0.5, −0.25)
        assert!((r[2] - (0.3125 / 12.0 + 0.5625 / 4.0)).abs() < 1e-15);
        assert!(teacher.risk_profile(&teacher, 50).iter().all(|&v| v == 0.0));
    }
}
