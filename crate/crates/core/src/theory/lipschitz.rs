//! Parameter-space Lipschitz constants that hold uniformly in sequence length,
//! and random probes that try to break them.
//!
//! The probes use small explicit models whose constants are known in closed
//! form: an RNN `h_t = σ̄(Λh_{t−1} + Bx_t)`, `y_t = A h_t` with the centred
//! sigmoid `σ̄(z) = σ(z) − ½` (so `σ̄(0) = 0` and `L_σ = ¼`), and a
//! single-head sigmoid-attention block `y_i = A·(1/i)Σ_j σ(q_iᵀk_j/√d)·v_j`.
//! Distances between parameter tuples are Euclidean over all entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{random_normal, sigmoid, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct LipschitzConstants {
    pub l_omega: f64,
    pub m_omega: f64,
    pub l_psi: f64,
    pub l_sigma: f64,
    pub lambda_sup: f64,
    pub b_sup: f64,
    pub x_sup: f64,
    pub h_sup: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// `√(L_ω² + M_ω²·L_ψ²)`.
pub fn lipschitz_bound_transformer_block(l_omega: f64, m_omega: f64, l_psi: f64) -> f64 {
    (l_omega * l_omega + m_omega * m_omega * l_psi * l_psi).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RnnBound {
    pub h_sup: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// `√(L_ω² + γ₁² + γ₂²)`.
    pub bound: f64,
    /// The same expression with `L_σ` in place of `L_ω`, as the closed form is
    /// sometimes written. Reported for comparison only.
    pub bound_with_l_sigma: f64,
}

/// RNN constants from `L_σ, Λ_sup, B_sup, x_sup, M_ω, L_ω` (the other fields
/// of `c` are ignored). Requires `L_σ·Λ_sup < 1`.
pub fn lipschitz_bound_rnn(c: &LipschitzConstants) -> Result<RnnBound> {
    let fields = [c.l_sigma, c.lambda_sup, c.b_sup, c.x_sup, c.m_omega, c.l_omega];
    if fields.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Precondition("constants must be finite and >= 0".into()));
    }
    let contraction = c.l_sigma * c.lambda_sup;
    if contraction >= 1.0 {
        return Err(Error::Precondition(format!(
            "L_σ·Λ_sup = {contraction} >= 1: the recurrence is not a contraction"
        )));
    }
    let gap = 1.0 - contraction;
    let h_sup = c.l_sigma * c.b_sup * c.x_sup / gap;
    let gamma1 = c.m_omega * c.l_sigma * c.l_sigma * c.b_sup * c.x_sup / (gap * gap);
    let gamma2 = c.m_omega * c.l_sigma * c.x_sup / gap;
    let rest = gamma1 * gamma1 + gamma2 * gamma2;
    Ok(RnnBound {
        h_sup,
        gamma1,
        gamma2,
        bound: (c.l_omega * c.l_omega + rest).sqrt(),
        bound_with_l_sigma: (c.l_sigma * c.l_sigma + rest).sqrt(),
    })
}

/// Largest observed `‖y_t(θ) − y_t(θ')‖ / ‖θ − θ'‖`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EmpiricalLipschitz {
    pub trials: usize,
    pub max_ratio: f64,
    /// Running maximum over trials of the ratio at each length `t`.
    pub max_by_t: Vec<f64>,
    pub bound: f64,
    pub violations: usize,
}

fn mat_vec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Gaussian matrix rescaled to spectral norm `u·sup` with `u ~ Uniform(0,1]`;
/// a third of draws sit exactly on the boundary.
fn bounded_matrix(rows: usize, cols: usize, sup: f64, rng: &mut RngStream) -> Matrix {
    let g = random_normal(rows, cols, 0.0, 1.0, rng);
    let s = g.spectral_norm().max(1e-300);
    let u = if rng.below(3) == 0 { 1.0 } else { 1.0 - rng.uniform() };
    g.scale(u * sup / s)
}

fn bounded_vector(n: usize, sup: f64, rng: &mut RngStream) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
    let s = norm(&g).max(1e-300);
    let u = if rng.below(3) == 0 { 1.0 } else { 1.0 - rng.uniform() };
    g.iter().map(|v| v * u * sup / s).collect()
}

/// Either an independent draw or a small perturbation of `base` kept inside
/// the norm ball.
fn partner(base: &Matrix, sup: f64, rng: &mut RngStream, near: bool) -> Matrix {
    if !near {
        return bounded_matrix(base.rows(), base.cols(), sup, rng);
    }
    let step = rng.uniform().powi(3) * 0.1 * sup.max(1e-12);
    let d = random_normal(base.rows(), base.cols(), 0.0, 1.0, rng);
    let d = d.scale(step / d.frobenius().max(1e-300));
    let m = base.add(&d).expect("same shape");
    let s = m.spectral_norm();
    if s > sup {
        m.scale(sup / s)
    } else {
        m
    }
}

/// RNN probe dimensions and norm bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct RnnProbe {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub lambda_sup: f64,
    pub b_sup: f64,
    pub a_sup: f64,
    pub x_sup: f64,
    pub horizon: usize,
}

impl Default for RnnProbe {
    fn default() -> Self {
        Self {
            n: 3,
            k: 4,
            m: 2,
            lambda_sup: 2.0,
            b_sup: 1.0,
            a_sup: 1.0,
            x_sup: 1.0,
            horizon: 100,
        }
    }
}

impl RnnProbe {
    pub const L_SIGMA: f64 = 0.25;

    /// With `y = A h`: `L_ω = h_sup` and `M_ω = A_sup`.
    pub fn constants(&self) -> Result<LipschitzConstants> {
        let mut c = LipschitzConstants {
            l_sigma: Self::L_SIGMA,
            lambda_sup: self.lambda_sup,
            b_sup: self.b_sup,
            x_sup: self.x_sup,
            m_omega: self.a_sup,
            ..Default::default()
        };
        let pre = lipschitz_bound_rnn(&c)?;
        c.h_sup = pre.h_sup;
        c.l_omega = pre.h_sup;
        c.gamma1 = pre.gamma1;
        c.gamma2 = pre.gamma2;
        Ok(c)
    }

    fn outputs(&self, lambda: &Matrix, b: &Matrix, a: &Matrix, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; self.k];
        xs.iter()
            .map(|x| {
                let lh = mat_vec(lambda, &h);
                let bx = mat_vec(b, x);
                h = lh.iter().zip(&bx).map(|(u, v)| sigmoid(u + v) - 0.5).collect();
                mat_vec(a, &h)
            })
            .collect()
    }
}

fn flat(ms: &[&Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

/// Random pairs `(θ, θ')` inside the norm box and random input sequences;
/// the ratio is tracked at every `t ≤ horizon`.
pub fn empirical_lipschitz_rnn(probe: &RnnProbe, trials: usize, seed: u64) -> Result<EmpiricalLipschitz> {
    let bound = lipschitz_bound_rnn(&probe.constants()?)?.bound;
    let mut rng = RngStream::new(seed, "lipschitz/rnn");
    let mut max_by_t = vec![0.0f64; probe.horizon];
    let mut violations = 0;
    for trial in 0..trials {
        let near = trial % 2 == 1;
        let lam = bounded_matrix(probe.k, probe.k, probe.lambda_sup, &mut rng);
        let b = bounded_matrix(probe.k, probe.n, probe.b_sup, &mut rng);
        let a = bounded_matrix(probe.m, probe.k, probe.a_sup, &mut rng);
        let (lam2, b2, a2) = loop {
            let l2 = partner(&lam, probe.lambda_sup, &mut rng, near);
            let b2 = partner(&b, probe.b_sup, &mut rng, near);
            let a2 = partner(&a, probe.a_sup, &mut rng, near);
            if dist(&flat(&[&lam, &b, &a]), &flat(&[&l2, &b2, &a2])) > 0.0 {
                break (l2, b2, a2);
            }
        };
        let d = dist(&flat(&[&lam, &b, &a]), &flat(&[&lam2, &b2, &a2]));
        let xs: Vec<Vec<f64>> = (0..probe.horizon)
            .map(|_| bounded_vector(probe.n, probe.x_sup, &mut rng))
            .collect();
        let y1 = probe.outputs(&lam, &b, &a, &xs);
        let y2 = probe.outputs(&lam2, &b2, &a2, &xs);
        for t in 0..probe.horizon {
            let r = dist(&y1[t], &y2[t]) / d;
            if r > bound {
                violations += 1;
            }
            max_by_t[t] = max_by_t[t].max(r);
        }
    }
    Ok(EmpiricalLipschitz {
        trials,
        max_ratio: max_by_t.iter().copied().fold(0.0, f64::max),
        max_by_t,
        bound,
        violations,
    })
}

/// Single-head sigmoid-attention block probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct TransformerProbe {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub wq_sup: f64,
    pub wk_sup: f64,
    pub wv_sup: f64,
    pub a_sup: f64,
    pub x_sup: f64,
    pub horizon: usize,
}

impl Default for TransformerProbe {
    fn default() -> Self {
        Self {
            n: 3,
            d: 4,
            m: 2,
            wq_sup: 1.0,
            wk_sup: 1.0,
            wv_sup: 1.0,
            a_sup: 1.0,
            x_sup: 1.0,
            horizon: 100,
        }
    }
}

impl TransformerProbe {
    /// `L_ψ` of `ψ(x_i, x_j) = σ(x_iᵀW_qᵀW_k x_j/√d)·W_v x_j` in `(W_q, W_k, W_v)`:
    /// the sigmoid has slope at most ¼, so
    /// `‖Δψ‖ ≤ a‖ΔW_q‖ + b‖ΔW_k‖ + x_sup‖ΔW_v‖` with
    /// `a = ¼·W_v,sup·x_sup³·W_k,sup/√d` and `b` likewise with `W_q,sup`.
    /// The readout `y = A z` has `L_ω = z_sup = W_v,sup·x_sup` and `M_ω = A_sup`.
    pub fn constants(&self) -> LipschitzConstants {
        let s = 0.25 / (self.d as f64).sqrt() * self.wv_sup * self.x_sup.powi(3);
        let a = s * self.wk_sup;
        let b = s * self.wq_sup;
        let c = self.x_sup;
        LipschitzConstants {
            l_omega: self.wv_sup * self.x_sup,
            m_omega: self.a_sup,
            l_psi: (a * a + b * b + c * c).sqrt(),
            x_sup: self.x_sup,
            ..Default::default()
        }
    }

    pub fn bound(&self) -> f64 {
        let c = self.constants();
        lipschitz_bound_transformer_block(c.l_omega, c.m_omega, c.l_psi)
    }

    fn outputs(&self, w: &[Matrix; 4], xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let [wq, wk, wv, a] = w;
        let q: Vec<Vec<f64>> = xs.iter().map(|x| mat_vec(wq, x)).collect();
        let k: Vec<Vec<f64>> = xs.iter().map(|x| mat_vec(wk, x)).collect();
        let v: Vec<Vec<f64>> = xs.iter().map(|x| mat_vec(wv, x)).collect();
        let scale = 1.0 / (self.d as f64).sqrt();
        let mut out = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let mut z = vec![0.0; self.d];
            for j in 0..=i {
                let s: f64 = q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() * scale;
                let g = sigmoid(s);
                for (zc, vc) in z.iter_mut().zip(&v[j]) {
                    *zc += g * vc;
                }
            }
            let inv = 1.0 / (i + 1) as f64;
            z.iter_mut().for_each(|v| *v *= inv);
            out.push(mat_vec(a, &z));
        }
        out
    }
}

pub fn empirical_lipschitz_transformer(
    probe: &TransformerProbe,
    trials: usize,
    seed: u64,
) -> Result<EmpiricalLipschitz> {
    let bound = probe.bound();
    let sups = [probe.wq_sup, probe.wk_sup, probe.wv_sup, probe.a_sup];
    let shapes = [
        (probe.d, probe.n),
        (probe.d, probe.n),
        (probe.d, probe.n),
        (probe.m, probe.d),
    ];
    let mut rng = RngStream::new(seed, "lipschitz/transformer");
    let mut max_by_t = vec![0.0f64; probe.horizon];
    let mut violations = 0;
    for trial in 0..trials {
        let near = trial % 2 == 1;
        let w: [Matrix; 4] =
            std::array::from_fn(|i| bounded_matrix(shapes[i].0, shapes[i].1, sups[i], &mut rng));
        let (w2, d) = loop {
            let w2: [Matrix; 4] = std::array::from_fn(|i| partner(&w[i], sups[i], &mut rng, near));
            let d = dist(
                &flat(&w.iter().collect::<Vec<_>>()),
                &flat(&w2.iter().collect::<Vec<_>>()),
            );
            if d > 0.0 {
                break (w2, d);
            }
        };
        let xs: Vec<Vec<f64>> = (0..probe.horizon)
            .map(|_| bounded_vector(probe.n, probe.x_sup, &mut rng))
            .collect();
        let y1 = probe.outputs(&w, &xs);
        let y2 = probe.outputs(&w2, &xs);
        for t in 0..probe.horizon {
            let r = dist(&y1[t], &y2[t]) / d;
            if r > bound {
                violations += 1;
            }
            max_by_t[t] = max_by_t[t].max(r);
        }
    }
    Ok(EmpiricalLipschitz {
        trials,
        max_ratio: max_by_t.iter().copied().fold(0.0, f64::max),
        max_by_t,
        bound,
        violations,
    })
}
