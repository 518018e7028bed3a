//! Central finite differences against the tape's adjoints, one primitive
//! at a time.

use super::{random_normal, random_uniform, Backend, Eager, Matrix, RngStream, Tape};
use crate::Result;

const H: f64 = 1e-5;

/// Relative error with a floor on the denominator so tiny gradients are
/// compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    MatMul,
    MatMulT,
    Add,
    Sub,
    Mul,
    AddRow,
    MulCol,
    Scale,
    Sigmoid,
    Exp,
    Log,
    Relu,
    Recip,
    RowSum,
    Sum,
    Mean,
    Mse,
}

impl Primitive {
    pub const ALL: [Primitive; 17] = [
        Primitive::MatMul,
        Primitive::MatMulT,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::AddRow,
        Primitive::MulCol,
        Primitive::Scale,
        Primitive::Sigmoid,
        Primitive::Exp,
        Primitive::Log,
        Primitive::Relu,
        Primitive::Recip,
        Primitive::RowSum,
        Primitive::Sum,
        Primitive::Mean,
        Primitive::Mse,
    ];

    /// Random operands of compatible shapes, kept away from kinks and poles.
    fn operands(self, rng: &mut RngStream) -> Vec<Matrix> {
        let r = 1 + rng.below(4);
        let c = 1 + rng.below(4);
        let k = 1 + rng.below(4);
        let g = |rows, cols, rng: &mut RngStream| random_normal(rows, cols, 0.0, 1.0, rng);
        match self {
            Primitive::MatMul => vec![g(r, k, rng), g(k, c, rng)],
            Primitive::MatMulT => vec![g(r, k, rng), g(c, k, rng)],
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Mse => vec![g(r, c, rng), g(r, c, rng)],
            Primitive::AddRow => vec![g(r, c, rng), g(1, c, rng)],
            Primitive::MulCol => vec![g(r, c, rng), g(r, 1, rng)],
            Primitive::Log | Primitive::Recip => vec![random_uniform(r, c, 0.5, 2.0, rng)],
            Primitive::Relu => {
                let m = g(r, c, rng);
                vec![m.map(|v| if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v })]
            }
            _ => vec![g(r, c, rng)],
        }
    }

    fn apply<B: Backend>(self, b: &mut B, x: &[B::Value]) -> Result<B::Value> {
        Ok(match self {
            Primitive::MatMul => b.matmul(&x[0], &x[1])?,
            Primitive::MatMulT => b.matmul_t(&x[0], &x[1])?,
            Primitive::Add => b.add(&x[0], &x[1])?,
            Primitive::Sub => b.sub(&x[0], &x[1])?,
            Primitive::Mul => b.mul(&x[0], &x[1])?,
            Primitive::AddRow => b.add_row(&x[0], &x[1])?,
            Primitive::MulCol => b.mul_col(&x[0], &x[1])?,
            Primitive::Scale => b.scale(&x[0], -1.7),
            Primitive::Sigmoid => b.sigmoid(&x[0]),
            Primitive::Exp => b.exp(&x[0]),
            Primitive::Log => b.log(&x[0]),
            Primitive::Relu => b.relu(&x[0]),
            Primitive::Recip => b.recip(&x[0]),
            Primitive::RowSum => b.row_sum(&x[0]),
            Primitive::Sum => b.sum(&x[0]),
            Primitive::Mean => b.mean(&x[0]),
            Primitive::Mse => b.mse(&x[0], &x[1])?,
        })
    }

    /// `Σ (op(x) ∘ w)` for a fixed random `w`, so every output entry gets a
    /// distinct seed.
    fn probe<B: Backend>(self, b: &mut B, x: &[B::Value], w: &Matrix) -> Result<B::Value> {
        let y = self.apply(b, x)?;
        let wv = b.constant(w.clone());
        let p = b.mul(&y, &wv)?;
        Ok(b.sum(&p))
    }

    /// Worst relative error between tape gradients and central differences
    /// over `instances` random operand draws.
    pub fn worst_error(self, instances: usize, rng: &mut RngStream) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let ops = self.operands(rng);
            let (rows, cols) = self.apply(&mut Eager, &ops)?.shape();
            let w = random_normal(rows, cols, 0.0, 1.0, rng);

            let mut tape = Tape::new();
            let vars: Vec<_> = ops.iter().map(|m| tape.param(m)).collect();
            let loss = self.probe(&mut tape, &vars, &w)?;
            let grads = tape.backward(loss)?.params();

            for (i, op) in ops.iter().enumerate() {
                for j in 0..op.len() {
                    let eval = |delta: f64| -> Result<f64> {
                        let mut xs = ops.clone();
                        xs[i].as_mut_slice()[j] += delta;
                        Ok(self.probe(&mut Eager, &xs, &w)?.item())
                    };
                    let numeric = (eval(H)? - eval(-H)?) / (2.0 * H);
                    worst = worst.max(rel_err(grads[i].as_slice()[j], numeric));
                }
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_floors_small_denominators() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!((rel_err(1e-6, 0.0) - 1e-3).abs() < 1e-15);
        assert!((rel_err(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
