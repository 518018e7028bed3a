//! Token distributions, teacher labelling and CoT traces.
//!
//! A batch of `batch` sequences of length `T` is stored position-major: one
//! `batch × n` matrix per position, so a single forward pass produces labels
//! for every prefix length `1..=T`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Proposals allowed per requested sample before a rejection sampler fails.
pub const MAX_PROPOSALS: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DistributionKind {
    /// i.i.d. `Uniform[0,1]ⁿ` tokens.
    UniformHypercube,
    /// Uniform tokens conditioned on `|Σ_j (x_jᵏ − ½)| ≤ halfwidth` for every component `k`.
    CompositionalBand { halfwidth: f64 },
    /// Uniform tokens conditioned on the band being violated for at least one component.
    CornerComplement { halfwidth: f64 },
    /// Each component uniform on `{0, 1/(levels−1), …, 1}`.
    DiscreteGrid { levels: usize },
}

impl DistributionKind {
    pub const BAND_HALFWIDTH: f64 = 0.5;

    pub fn band() -> Self {
        Self::CompositionalBand {
            halfwidth: Self::BAND_HALFWIDTH,
        }
    }

    pub fn corners() -> Self {
        Self::CornerComplement {
            halfwidth: Self::BAND_HALFWIDTH,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::UniformHypercube => "uniform",
            Self::CompositionalBand { .. } => "band",
            Self::CornerComplement { .. } => "corners",
            Self::DiscreteGrid { .. } => "discrete",
        }
    }
}

/// A token distribution over sequences of length `t` with `n`-dim tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub n: usize,
    pub t: usize,
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind, n: usize, t: usize) -> Self {
        Self { kind, n, t }
    }

    pub fn uniform(n: usize, t: usize) -> Self {
        Self::new(DistributionKind::UniformHypercube, n, t)
    }

    /// Same distribution at a different length.
    pub fn with_len(self, t: usize) -> Self {
        Self { t, ..self }
    }

    pub fn sample(&self, batch: usize, rng: &mut RngStream) -> Result<Vec<Matrix>> {
        match self.kind {
            DistributionKind::UniformHypercube => sample_uniform(self.n, self.t, batch, rng),
            DistributionKind::CompositionalBand { halfwidth } => {
                sample_band(self.n, self.t, batch, halfwidth, rng)
            }
            DistributionKind::CornerComplement { halfwidth } => {
                sample_corners(self.n, self.t, batch, halfwidth, rng)
            }
            DistributionKind::DiscreteGrid { levels } => {
                sample_discrete(self.n, self.t, batch, levels, rng)
            }
        }
    }
}

fn check_dims(n: usize, t: usize, batch: usize) -> Result<()> {
    if n == 0 || t == 0 || batch == 0 {
        return Err(Error::Config(format!(
            "n, T and batch must be >= 1 (got n={n}, T={t}, batch={batch})"
        )));
    }
    Ok(())
}

fn to_positions(n: usize, t: usize, batch: usize, seqs: &[f64]) -> Vec<Matrix> {
    // seqs is batch-major: seq b, position j, component c
    (0..t)
        .map(|j| {
            let mut m = Matrix::zeros(batch, n);
            for b in 0..batch {
                let src = &seqs[(b * t + j) * n..(b * t + j + 1) * n];
                m.row_mut(b).copy_from_slice(src);
            }
            m
        })
        .collect()
}

pub fn sample_uniform(n: usize, t: usize, batch: usize, rng: &mut RngStream) -> Result<Vec<Matrix>> {
    check_dims(n, t, batch)?;
    let seqs: Vec<f64> = (0..batch * t * n).map(|_| rng.uniform()).collect();
    Ok(to_positions(n, t, batch, &seqs))
}

/// Whether a single `t × n` sequence (row-major) satisfies the band for every component.
pub fn in_band(seq: &[f64], n: usize, halfwidth: f64) -> bool {
    (0..n).all(|c| component_in_band(seq.iter().skip(c).step_by(n).copied(), halfwidth))
}

fn component_in_band(values: impl Iterator<Item = f64>, halfwidth: f64) -> bool {
    values.map(|v| v - 0.5).sum::<f64>().abs() <= halfwidth
}

/// Band-constrained training sequences.
///
/// The constraint factorizes over components and components are independent
/// under the uniform proposal, so each component's length-`t` column is drawn
/// by its own rejection loop. The accepted law equals joint rejection from the
/// hypercube, at a fraction of the proposals.
pub fn sample_band(
    n: usize,
    t: usize,
    batch: usize,
    halfwidth: f64,
    rng: &mut RngStream,
) -> Result<Vec<Matrix>> {
    check_dims(n, t, batch)?;
    let mut seqs = vec![0.0; batch * t * n];
    let mut column = vec![0.0; t];
    for b in 0..batch {
        let mut proposals = 0u64;
        for c in 0..n {
            loop {
                proposals += 1;
                if proposals > MAX_PROPOSALS {
                    return Err(Error::Sampler(format!(
                        "band acceptance too low for n={n}, T={t} after {MAX_PROPOSALS} \
                         proposals; use a smaller T or n"
                    )));
                }
                for v in column.iter_mut() {
                    *v = rng.uniform();
                }
                if component_in_band(column.iter().copied(), halfwidth) {
                    break;
                }
            }
            for (j, &v) in column.iter().enumerate() {
                seqs[(b * t + j) * n + c] = v;
            }
        }
    }
    Ok(to_positions(n, t, batch, &seqs))
}

/// Sequences from the complement of the band: uniform proposals kept only
/// when at least one component leaves the band.
pub fn sample_corners(
    n: usize,
    t: usize,
    batch: usize,
    halfwidth: f64,
    rng: &mut RngStream,
) -> Result<Vec<Matrix>> {
    check_dims(n, t, batch)?;
    let mut seqs = Vec::with_capacity(batch * t * n);
    let mut proposal = vec![0.0; t * n];
    for _ in 0..batch {
        let mut proposals = 0u64;
        loop {
            proposals += 1;
            if proposals > MAX_PROPOSALS {
                return Err(Error::Sampler(format!(
                    "complement acceptance too low for n={n}, T={t}"
                )));
            }
            for v in proposal.iter_mut() {
                *v = rng.uniform();
            }
            if !in_band(&proposal, n, halfwidth) {
                break;
            }
        }
        seqs.extend_from_slice(&proposal);
    }
    Ok(to_positions(n, t, batch, &seqs))
}

/// Fraction of joint uniform proposals that land in the band.
pub fn band_acceptance_rate(
    n: usize,
    t: usize,
    halfwidth: f64,
    proposals: usize,
    rng: &mut RngStream,
) -> f64 {
    let mut seq = vec![0.0; t * n];
    let mut hits = 0usize;
    for _ in 0..proposals {
        for v in seq.iter_mut() {
            *v = rng.uniform();
        }
        if in_band(&seq, n, halfwidth) {
            hits += 1;
        }
    }
    hits as f64 / proposals as f64
}

pub fn sample_discrete(
    n: usize,
    t: usize,
    batch: usize,
    levels: usize,
    rng: &mut RngStream,
) -> Result<Vec<Matrix>> {
    check_dims(n, t, batch)?;
    if levels < 2 {
        return Err(Error::Config(format!("need at least 2 levels, got {levels}")));
    }
    let step = 1.0 / (levels - 1) as f64;
    let seqs: Vec<f64> = (0..batch * t * n)
        .map(|_| rng.below(levels) as f64 * step)
        .collect();
    Ok(to_positions(n, t, batch, &seqs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMeta {
    pub distribution: String,
    pub seed: u64,
    pub teacher: String,
}

/// Tokens with per-prefix labels and optional hidden traces.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    pub tokens: Vec<Matrix>,
    pub labels: Vec<Matrix>,
    pub cot: Option<Vec<Matrix>>,
    pub meta: BatchMeta,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.first().map_or(0, Matrix::rows)
    }

    /// Writes `seq_id,t,x0..,y0..` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.tokens.first().map_or(0, Matrix::cols);
        let m = self.labels.first().map_or(0, Matrix::cols);
        let mut header = vec!["seq_id".to_string(), "t".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        for b in 0..self.batch_size() {
            for (t, (x, y)) in self.tokens.iter().zip(&self.labels).enumerate() {
                let mut rec = vec![b.to_string(), (t + 1).to_string()];
                rec.extend(x.row(b).iter().map(|v| format!("{v:e}")));
                rec.extend(y.row(b).iter().map(|v| format!("{v:e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Labels every prefix of `tokens` with `teacher`; with `with_cot`, also
/// records the teacher's hidden trace.
pub fn label_batch(teacher: &Model, tokens: Vec<Matrix>, with_cot: bool) -> Result<SequenceBatch> {
    let trace = teacher.run(&tokens)?;
    Ok(SequenceBatch {
        tokens,
        labels: trace.labels,
        cot: with_cot.then_some(trace.hidden),
        meta: BatchMeta {
            distribution: String::new(),
            seed: 0,
            teacher: format!("{}", teacher.family()),
        },
    })
}

/// Random stream for one batch of a streaming split. Every `(seed, split,
/// epoch, batch)` maps to its own stream, so epochs are regenerated online
/// and reproducibly.
pub fn batch_rng(seed: u64, split: &str, epoch: usize, batch: usize) -> RngStream {
    RngStream::new(seed, split).indexed(((epoch as u64) << 32) | batch as u64)
}

/// Samples tokens from `dist` and labels them.
pub fn draw_batch(
    teacher: &Model,
    dist: &DistributionSpec,
    batch: usize,
    with_cot: bool,
    rng: &mut RngStream,
) -> Result<SequenceBatch> {
    let tokens = dist.sample(batch, rng)?;
    let mut out = label_batch(teacher, tokens, with_cot)?;
    out.meta.distribution = dist.kind.tag().to_string();
    out.meta.seed = rng.seed();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{DeepSetModel, Capacity, Map};

    #[test]
    fn uniform_support_and_determinism() {
        let a = sample_uniform(3, 4, 50, &mut RngStream::new(1, "u")).unwrap();
        let b = sample_uniform(3, 4, 50, &mut RngStream::new(1, "u")).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|m| m.as_slice().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(a.len(), 4);
        assert_eq!(a[0].shape(), (50, 3));
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(sample_uniform(0, 3, 2, &mut RngStream::new(1, "u")).is_err());
        assert!(sample_discrete(2, 3, 2, 1, &mut RngStream::new(1, "u")).is_err());
    }

    #[test]
    fn band_and_corner_samples_respect_their_sets() {
        let (n, t) = (3, 4);
        let band = sample_band(n, t, 200, 0.5, &mut RngStream::new(2, "b")).unwrap();
        let corners = sample_corners(n, t, 200, 0.5, &mut RngStream::new(2, "c")).unwrap();
        for b in 0..200 {
            let seq = |pos: &[Matrix]| -> Vec<f64> {
                pos.iter().flat_map(|m| m.row(b).to_vec()).collect()
            };
            assert!(in_band(&seq(&band), n, 0.5));
            assert!(!in_band(&seq(&corners), n, 0.5));
        }
    }

    #[test]
    fn discrete_levels_two_is_binary() {
        let x = sample_discrete(4, 3, 100, 2, &mut RngStream::new(5, "d")).unwrap();
        assert!(x
            .iter()
            .all(|m| m.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)));
    }

    #[test]
    fn identity_sum_teacher_labels() {
        let teacher = Model::DeepSet(
            DeepSetModel::new(Map::identity(1), Map::identity(1), Capacity::HighCapacity).unwrap(),
        );
        let tokens = vec![Matrix::scalar(0.1), Matrix::scalar(0.2)];
        let batch = label_batch(&teacher, tokens, true).unwrap();
        assert!((batch.labels[0].item() - 0.1).abs() < 1e-15);
        assert!((batch.labels[1].item() - 0.3).abs() < 1e-15);
        assert_eq!(batch.cot.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn csv_dump_has_documented_header() {
        let teacher = Model::DeepSet(
            DeepSetModel::new(Map::identity(2), Map::identity(2), Capacity::HighCapacity).unwrap(),
        );
        let tokens = sample_uniform(2, 3, 2, &mut RngStream::new(0, "x")).unwrap();
        let batch = label_batch(&teacher, tokens, false).unwrap();
        let mut buf = Vec::new();
        batch.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "seq_id,t,x0,x1,y0,y1");
        assert_eq!(text.lines().count(), 1 + 2 * 3);
    }
}
