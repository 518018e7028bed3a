use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned lattice cover of a parameter box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub eta: f64,
    pub lipschitz: f64,
    pub epsilon: f64,
    pub grid: Vec<Vec<f64>>,
}

impl CoverSpec {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Grid point closest to `theta` in Euclidean distance, with that distance.
    pub fn nearest(&self, theta: &[f64]) -> (usize, f64) {
        self.grid
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let d = g.iter().zip(theta).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty cover")
    }
}

/// Lattice with spacing `2η/√d` per axis and `η = ε/L`, so every point of
/// the box lies within Euclidean distance `η` of the grid. Fails if more
/// than `max_points` are needed.
pub fn build_cover(
    lower: &[f64],
    upper: &[f64],
    epsilon: f64,
    lipschitz: f64,
    max_points: usize,
) -> Result<CoverSpec> {
    let d = lower.len();
    if d == 0 || upper.len() != d || lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
        return Err(Error::Config("cover needs a non-empty box with lower <= upper".into()));
    }
    if !(epsilon > 0.0 && lipschitz > 0.0) {
        return Err(Error::Config("ε and L must be positive".into()));
    }
    let eta = epsilon / lipschitz;
    let spacing = 2.0 * eta / (d as f64).sqrt();
    let axes: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .map(|(&lo, &hi)| {
            let count = (((hi - lo) / spacing).ceil() as usize).max(1);
            // cell midpoints; cells are no wider than the nominal spacing
            let cell = (hi - lo) / count as f64;
            (0..count).map(|i| lo + (i as f64 + 0.5) * cell).collect()
        })
        .collect();
    let total = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    match total {
        Some(n) if n <= max_points => {}
        _ => {
            return Err(Error::Config(format!(
                "cover with η={eta:.3e} needs more than {max_points} points"
            )))
        }
    }
    let mut grid: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        grid = grid
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    Ok(CoverSpec {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        eta,
        lipschitz,
        epsilon,
        grid,
    })
}

/// Cover points whose risk is within `epsilon` at every length `1..=train_len`.
/// `risks[p][t−1]` is the risk of point `p` at length `t`.
pub fn constrained_survivors(risks: &[Vec<f64>], epsilon: f64, train_len: usize) -> Vec<usize> {
    (0..risks.len())
        .filter(|&p| risks[p].iter().take(train_len).all(|&r| r <= epsilon))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivorTrace {
    /// `sets[T]` for `T = 0..=horizon`.
    pub sets: Vec<Vec<usize>>,
    /// First `T` from which the survivor set no longer changes up to the horizon.
    pub t0: usize,
    /// Set when no point survives: the point with the smallest worst-case risk and that risk.
    pub nearest_miss: Option<(usize, f64)>,
}

impl SurvivorTrace {
    pub fn is_nested(&self) -> bool {
        self.sets
            .windows(2)
            .all(|w| w[1].iter().all(|p| w[0].contains(p)))
    }

    pub fn stabilized(&self) -> &[usize] {
        self.sets.last().map_or(&[], Vec::as_slice)
    }
}

/// Survivor sets of the constrained learner for every training length up to
/// `risks[·].len()`.
pub fn survivor_sequence(risks: &[Vec<f64>], epsilon: f64) -> SurvivorTrace {
    let horizon = risks.first().map_or(0, Vec::len);
    let sets: Vec<Vec<usize>> = (0..=horizon)
        .map(|t| constrained_survivors(risks, epsilon, t))
        .collect();
    let last = sets.last().cloned().unwrap_or_default();
    let t0 = (0..=horizon)
        .find(|&t| sets[t] == last)
        .unwrap_or(horizon);
    let nearest_miss = last.is_empty().then(|| {
        risks
            .iter()
            .enumerate()
            .map(|(p, r)| (p, r.iter().copied().fold(0.0, f64::max)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }).flatten();
    SurvivorTrace {
        sets,
        t0,
        nearest_miss,
    }
}
