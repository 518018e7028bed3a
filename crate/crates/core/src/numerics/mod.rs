//! Dense matrices, reverse-mode autodiff and seeded random streams.

pub mod gradcheck;
mod matrix;
mod rng;
mod tape;

pub use matrix::Matrix;
pub use rng::RngStream;
pub use tape::{sigmoid, Backend, Eager, Gradients, Tape, Var};

/// Random orthogonal `n × n` matrix: QR of a Gaussian matrix with the sign of
/// `R`'s diagonal folded into `Q`, which makes the draw Haar-distributed.
pub fn random_orthogonal(n: usize, rng: &mut RngStream) -> Matrix {
    let g = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.normal(0.0, 1.0));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Matrix::from_nalgebra(&q)
}

/// Matrix with i.i.d. `N(mean, std²)` entries.
pub fn random_normal(rows: usize, cols: usize, mean: f64, std: f64, rng: &mut RngStream) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal(mean, std)).collect();
    Matrix::from_vec(rows, cols, data).expect("length matches by construction")
}

/// Matrix with i.i.d. `Uniform[lo, hi)` entries.
pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngStream) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| lo + (hi - lo) * rng.uniform())
        .collect();
    Matrix::from_vec(rows, cols, data).expect("length matches by construction")
}
