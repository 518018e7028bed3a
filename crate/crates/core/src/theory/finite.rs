use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite hypothesis class given as a Cartesian grid of parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisGrid {
    pub family: String,
    pub axes: Vec<(String, Vec<f64>)>,
    pub entries: Vec<Vec<f64>>,
}

impl HypothesisGrid {
    pub fn new(family: &str, axes: Vec<(String, Vec<f64>)>) -> Self {
        let mut entries: Vec<Vec<f64>> = vec![Vec::new()];
        for (_, values) in &axes {
            entries = entries
                .into_iter()
                .flat_map(|e| {
                    values.iter().map(move |&v| {
                        let mut next = e.clone();
                        next.push(v);
                        next
                    })
                })
                .collect();
        }
        Self {
            family: family.into(),
            axes,
            entries,
        }
    }

    /// Appends an explicit entry (e.g. a reparametrization of the teacher).
    pub fn with_entry(mut self, entry: Vec<f64>) -> Self {
        self.entries.push(entry);
        self
    }

    pub fn position(&self, params: &[f64]) -> Option<usize> {
        self.entries.iter().position(|e| e == params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteClassReport {
    pub teacher_entry: usize,
    pub tolerance: f64,
    pub horizon: usize,
    /// `risk_table[e][t−1]`.
    pub risk_table: Vec<Vec<f64>>,
    /// First length with risk above tolerance, `None` if there is none up to the horizon.
    pub t_h: Vec<Option<usize>>,
    /// Largest finite `T_h` (0 if every entry agrees with the teacher at every probed length).
    pub t0: usize,
}

impl FiniteClassReport {
    /// Entries with risk within tolerance at every `t ≤ train_len`.
    pub fn survivors(&self, train_len: usize) -> Vec<usize> {
        (0..self.t_h.len())
            .filter(|&e| self.t_h[e].map_or(true, |th| th > train_len))
            .collect()
    }

    /// Whether every survivor at `train_len` stays within tolerance at every
    /// probed length.
    pub fn certified(&self, train_len: usize) -> bool {
        self.survivors(train_len)
            .iter()
            .all(|&e| self.risk_table[e].iter().all(|&r| r <= self.tolerance))
    }

    /// Cumulative risk `Σ_{s≤t} R̃(h, s)` for one entry.
    pub fn cumulative(&self, entry: usize) -> Vec<f64> {
        self.risk_table[entry]
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }

    /// `entry_id,params…,t_h,survives_at_T` rows.
    pub fn write_csv<W: Write>(&self, grid: &HypothesisGrid, train_len: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["entry_id".to_string()];
        let dims = grid.entries.first().map_or(0, Vec::len);
        header.extend((0..dims).map(|i| {
            grid.axes
                .get(i)
                .map_or_else(|| format!("p{i}"), |(name, _)| name.clone())
        }));
        header.push("t_h".into());
        header.push("survives_at_T".into());
        w.write_record(&header)?;
        let surv = self.survivors(train_len);
        for (e, params) in grid.entries.iter().enumerate() {
            let mut rec = vec![e.to_string()];
            rec.extend(params.iter().map(|v| v.to_string()));
            rec.push(self.t_h[e].map_or_else(|| "inf".into(), |t| t.to_string()));
            rec.push(surv.contains(&e).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Computes each entry's risk at lengths `1..=horizon` with `risk`, the
/// first length at which it exceeds `tolerance`, and the class threshold
/// `T₀ = max T_h` over entries that ever exceed it.
pub fn finite_class_t0(
    grid: &HypothesisGrid,
    teacher: &[f64],
    horizon: usize,
    tolerance: f64,
    risk: impl Fn(&[f64], usize) -> Vec<f64>,
) -> Result<FiniteClassReport> {
    let teacher_entry = grid.position(teacher).ok_or_else(|| {
        Error::Precondition(format!(
            "teacher {teacher:?} is not a grid entry; the class is not realizable"
        ))
    })?;
    let risk_table: Vec<Vec<f64>> = grid.entries.iter().map(|e| risk(e, horizon)).collect();
    if risk_table.iter().any(|r| r.len() != horizon) {
        return Err(Error::Shape("risk function returned the wrong horizon".into()));
    }
    let t_h: Vec<Option<usize>> = risk_table
        .iter()
        .map(|r| r.iter().position(|&v| v > tolerance).map(|i| i + 1))
        .collect();
    let t0 = t_h.iter().flatten().copied().max().unwrap_or(0);
    Ok(FiniteClassReport {
        teacher_entry,
        tolerance,
        horizon,
        risk_table,
        t_h,
        t0,
    })
}
