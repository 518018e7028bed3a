//! Per-length risk, linear identification and permutation recovery.
//!
//! The loss at a position is the squared error averaged over label dims,
//! the same quantity the trainer minimizes.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::arch::Model;
use crate::datagen::{DistributionKind, DistributionSpec};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

/// Rows per forward pass during evaluation.
const CHUNK: usize = 2000;

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            samples: n,
        }
    }
}

fn per_row_mse(pred: &Matrix, target: &Matrix) -> Vec<f64> {
    let m = pred.cols() as f64;
    (0..pred.rows())
        .map(|r| {
            pred.row(r)
                .iter()
                .zip(target.row(r))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / m
        })
        .collect()
}

/// Whether prefixes of a long sample are distributed like samples of the
/// shorter length, so one pass at the longest length serves every length.
fn prefix_consistent(kind: &DistributionKind) -> bool {
    matches!(
        kind,
        DistributionKind::UniformHypercube | DistributionKind::DiscreteGrid { .. }
    )
}

/// Per-sequence losses at each requested length.
fn losses_at(
    student: &Model,
    teacher: &Model,
    lengths: &[usize],
    dist: &DistributionSpec,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if lengths.is_empty() || lengths.contains(&0) || num_samples == 0 {
        return Err(Error::Config(
            "need lengths >= 1 and at least one sample".into(),
        ));
    }
    let mut out = vec![Vec::with_capacity(num_samples); lengths.len()];
    let groups: Vec<(usize, Vec<usize>)> = if prefix_consistent(&dist.kind) {
        let max = *lengths.iter().max().expect("non-empty");
        vec![(max, (0..lengths.len()).collect())]
    } else {
        lengths.iter().enumerate().map(|(i, &t)| (t, vec![i])).collect()
    };
    for (t, slots) in groups {
        let spec = dist.with_len(t);
        let mut rng = RngStream::new(seed, &format!("eval/{t}"));
        let mut done = 0;
        while done < num_samples {
            let rows = CHUNK.min(num_samples - done);
            let tokens = spec.sample(rows, &mut rng)?;
            let pred = student.run(&tokens)?;
            let truth = teacher.run(&tokens)?;
            for &slot in &slots {
                let pos = lengths[slot] - 1;
                out[slot].extend(per_row_mse(&pred.labels[pos], &truth.labels[pos]));
            }
            done += rows;
        }
    }
    Ok(out)
}

/// `R̃(h, t)`: expected loss at exactly length `t`.
pub fn risk_at_length(
    student: &Model,
    teacher: &Model,
    t: usize,
    dist: &DistributionSpec,
    num_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let losses = losses_at(student, teacher, &[t], dist, num_samples, seed)?;
    Ok(Estimate::from_samples(&losses[0]))
}

/// Risk at several lengths from one set of draws where the distribution allows it.
pub fn risk_curve(
    student: &Model,
    teacher: &Model,
    lengths: &[usize],
    dist: &DistributionSpec,
    num_samples: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    Ok(losses_at(student, teacher, lengths, dist, num_samples, seed)?
        .iter()
        .map(|l| Estimate::from_samples(l))
        .collect())
}

/// OLS fit of the true representation on the learned one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Fit {
    pub per_dim: Vec<f64>,
    pub mean: f64,
    /// The design matrix was rank deficient; the fit used a pseudo-inverse.
    pub degenerate: bool,
}

/// Fits `truth ≈ learned·W + b` by least squares and reports `1 − SSres/SStot`
/// per column of `truth`. Columns with no variance score 1 when fitted
/// exactly and 0 otherwise.
pub fn linear_identification_r2(learned: &Matrix, truth: &Matrix) -> Result<R2Fit> {
    let (n, k) = learned.shape();
    if truth.rows() != n {
        return Err(Error::Shape(format!(
            "{n} learned rows vs {} true rows",
            truth.rows()
        )));
    }
    if n < k + 1 {
        return Err(Error::Precondition(format!(
            "need at least {} paired samples, got {n}",
            k + 1
        )));
    }
    let mut x = DMatrix::<f64>::zeros(n, k + 1);
    for r in 0..n {
        for c in 0..k {
            x[(r, c)] = learned[(r, c)];
        }
        x[(r, k)] = 1.0;
    }
    let y = truth.to_nalgebra();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * n.max(k + 1) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd
        .solve(&y, tol)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let resid = &y - &x * &beta;
    let per_dim: Vec<f64> = (0..truth.cols())
        .map(|c| {
            let col = y.column(c);
            let mean = col.mean();
            let ss_tot: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = resid.column(c).iter().map(|v| v * v).sum();
            let scale = col.iter().map(|v| v * v).sum::<f64>().max(1.0);
            if ss_tot <= 1e-24 * scale {
                if ss_res <= 1e-20 * scale {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - ss_res / ss_tot
            }
        })
        .collect();
    let mean = per_dim.iter().sum::<f64>() / per_dim.len().max(1) as f64;
    Ok(R2Fit {
        per_dim,
        mean,
        degenerate: rank < k + 1,
    })
}

/// Hidden representations of both models on `tokens`, one pair per position.
pub fn hidden_pairs(student: &Model, teacher: &Model, tokens: &[Matrix]) -> Result<Vec<(Matrix, Matrix)>> {
    let s = student.run(tokens)?;
    let t = teacher.run(tokens)?;
    Ok(s.hidden.into_iter().zip(t.hidden).collect())
}

/// Identification `R²` at each position of `num_samples` held-out sequences of
/// length `t`, plus their mean.
pub fn identification_by_position(
    student: &Model,
    teacher: &Model,
    dist: &DistributionSpec,
    t: usize,
    num_samples: usize,
    seed: u64,
) -> Result<(Vec<R2Fit>, f64)> {
    let tokens = dist
        .with_len(t)
        .sample(num_samples, &mut RngStream::new(seed, "identification"))?;
    let fits = hidden_pairs(student, teacher, &tokens)?
        .iter()
        .map(|(l, truth)| linear_identification_r2(l, truth))
        .collect::<Result<Vec<_>>>()?;
    let mean = fits.iter().map(|f| f.mean).sum::<f64>() / fits.len() as f64;
    Ok((fits, mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationScore {
    /// Fraction of rows that pick a distinct column and are concentrated on it.
    pub score: f64,
    /// `perm[i]` is the row whose dominant entry sits in column `i`, when unique.
    pub perm: Vec<Option<usize>>,
    /// Fitted map with `h_teacher ≈ M h_student`.
    pub map: Matrix,
}

impl PermutationScore {
    pub fn is_permutation(&self) -> bool {
        self.perm.iter().all(Option::is_some)
    }
}

/// Fits `h_teacher ≈ M h_student` over all positions of `probe` and checks
/// whether `M` is a permutation matrix up to small off-pattern mass.
pub fn permutation_recovery(student: &Model, teacher: &Model, probe: &[Matrix]) -> Result<PermutationScore> {
    if student.hidden_dim() != teacher.hidden_dim() {
        return Err(Error::Config("hidden dims differ".into()));
    }
    let k = student.hidden_dim();
    let pairs = hidden_pairs(student, teacher, probe)?;
    let hs: Vec<&Matrix> = pairs.iter().map(|p| &p.0).collect();
    let ht: Vec<&Matrix> = pairs.iter().map(|p| &p.1).collect();
    let xs = Matrix::vstack(&hs)?.to_nalgebra();
    let yt = Matrix::vstack(&ht)?.to_nalgebra();
    // rows: h_sᵀ Mᵀ = h_tᵀ
    let svd = xs.svd(true, true);
    let tol = svd.singular_values.max() * 1e-12;
    let mt = svd.solve(&yt, tol).map_err(|e| Error::Singular(e.to_string()))?;
    let map = Matrix::from_nalgebra(&mt.transpose());

    let mut argmax = Vec::with_capacity(k);
    for r in 0..k {
        let row = map.row(r);
        let (c, &v) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("k >= 1");
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        let off = (norm * norm - v * v).max(0.0).sqrt();
        argmax.push((c, v > 0.0 && off <= 0.1 * norm));
    }
    let mut perm = vec![None; k];
    let mut good = 0;
    for (r, &(c, concentrated)) in argmax.iter().enumerate() {
        let unique = argmax.iter().filter(|(c2, _)| *c2 == c).count() == 1;
        if unique {
            perm[c] = Some(r);
            if concentrated {
                good += 1;
            }
        }
    }
    Ok(PermutationScore {
        score: good as f64 / k as f64,
        perm,
        map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub t: usize,
    pub risk_mean: f64,
    pub risk_std: f64,
    pub r2_mean: Option<f64>,
    pub r2_std: Option<f64>,
    pub perm_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub family: String,
    pub distribution: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<LengthRow>,
    /// Per-seed risk at each row's length.
    pub per_seed: Vec<Vec<f64>>,
    /// Identification `R²` averaged over every position up to the longest
    /// length, then over seeds.
    #[serde(default)]
    pub r2_overall: Option<f64>,
}

pub const EVAL_CSV_HEADER: [&str; 8] = [
    "model", "family", "t", "risk_mean", "risk_std", "r2_mean", "r2_std", "perm_score",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl EvalReport {
    pub fn row(&self, t: usize) -> Option<&LengthRow> {
        self.rows.iter().find(|r| r.t == t)
    }

    pub fn write_csv<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for r in &self.rows {
            w.write_record([
                self.model.clone(),
                self.family.clone(),
                r.t.to_string(),
                format!("{:e}", r.risk_mean),
                format!("{:e}", r.risk_std),
                opt(r.r2_mean),
                opt(r.r2_std),
                opt(r.perm_score),
            ])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(EVAL_CSV_HEADER)?;
        self.write_csv(&mut w)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Options for [`length_gen_curve`].
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    pub num_samples: usize,
    /// Held-out sequences for the identification fit; 0 disables it.
    pub r2_samples: usize,
    pub seed: u64,
    pub model: String,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self {
            num_samples: 10_000,
            r2_samples: 1000,
            seed: 0,
            model: "student".into(),
        }
    }
}

/// Risk (and identification `R²`) at each of `lengths` for a set of
/// `(student, teacher)` pairs, one per seed, aggregated as mean ± std.
pub fn length_gen_curve(
    pairs: &[(&Model, &Model)],
    seeds: &[u64],
    lengths: &[usize],
    dist: &DistributionSpec,
    opts: &CurveOptions,
) -> Result<EvalReport> {
    if pairs.is_empty() || pairs.len() != seeds.len() {
        return Err(Error::Config("need one (student, teacher) pair per seed".into()));
    }
    if lengths.is_empty() {
        return Err(Error::Config("no lengths to evaluate".into()));
    }
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("lengths must be strictly increasing".into()));
    }
    let mut risks = vec![Vec::new(); lengths.len()];
    let mut r2s = vec![Vec::new(); lengths.len()];
    let mut overall = Vec::new();
    for (&(student, teacher), &seed) in pairs.iter().zip(seeds) {
        let est = risk_curve(student, teacher, lengths, dist, opts.num_samples, seed ^ opts.seed)?;
        for (i, e) in est.iter().enumerate() {
            risks[i].push(e.mean);
        }
        if opts.r2_samples > 0 && student.hidden_dim() + 1 <= opts.r2_samples {
            let max = *lengths.last().expect("non-empty");
            let (fits, _) =
                identification_by_position(student, teacher, dist, max, opts.r2_samples, seed ^ opts.seed)?;
            for (i, &t) in lengths.iter().enumerate() {
                r2s[i].push(fits[t - 1].mean);
            }
            overall.push(fits.iter().map(|f| f.mean).sum::<f64>() / fits.len() as f64);
        }
    }
    let rows = lengths
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let (risk_mean, risk_std) = mean_std(&risks[i]);
            let (r2_mean, r2_std) = if r2s[i].is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&r2s[i]);
                (Some(m), Some(s))
            };
            LengthRow {
                t,
                risk_mean,
                risk_std,
                r2_mean,
                r2_std,
                perm_score: None,
            }
        })
        .collect();
    let per_seed = (0..pairs.len())
        .map(|s| risks.iter().map(|r| r[s]).collect())
        .collect();
    Ok(EvalReport {
        model: opts.model.clone(),
        family: pairs[0].0.family().to_string(),
        distribution: dist.kind.tag().to_string(),
        seeds: seeds.to_vec(),
        rows,
        per_seed,
        r2_overall: (!overall.is_empty()).then(|| mean_std(&overall).0),
    })
}

/// Writes one sequence's true and predicted labels: `t,true0..,pred0..`.
pub fn write_trajectory<W: Write>(
    student: &Model,
    teacher: &Model,
    tokens: &[Matrix],
    out: W,
) -> Result<()> {
    let pred = student.run(tokens)?;
    let truth = teacher.run(tokens)?;
    let m = teacher.out_dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..m).map(|i| format!("true{i}")));
    header.extend((0..m).map(|i| format!("pred{i}")));
    w.write_record(&header)?;
    for (t, (y, p)) in truth.labels.iter().zip(&pred.labels).enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(y.row(0).iter().map(|v| format!("{v:e}")));
        rec.extend(p.row(0).iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
