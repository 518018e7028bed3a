//! Reverse-mode automatic differentiation over dense matrices.
//!
//! Model code is written once against [`Backend`]. Running it on a [`Tape`]
//! records every primitive so that [`Tape::backward`] can propagate
//! adjoints; running it on [`Eager`] just computes values and drops
//! intermediates, which is what long-sequence evaluation needs.
//!
//! A tape lives for one training step and is then discarded.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Primitive operations available to model code.
///
/// Binary ops require equal shapes except where noted; there is no implicit
/// broadcasting apart from [`Backend::add_row`] and [`Backend::mul_col`].
pub trait Backend {
    type Value: Clone;

    /// A value that does not receive gradients.
    fn constant(&mut self, m: Matrix) -> Self::Value;
    /// A trainable leaf. Gradients are reported in the order leaves are created.
    fn param(&mut self, m: &Matrix) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Matrix;

    /// `a · b`
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// `a · bᵀ`; applies an `out × in` weight to row-batched inputs.
    fn matmul_t(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Elementwise product.
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    /// Adds a `1 × c` bias row to each row of `a`.
    fn add_row(&mut self, a: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    /// Scales row `r` of `a` by `col[r]` (`col` is `rows × 1`).
    fn mul_col(&mut self, a: &Self::Value, col: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, s: f64) -> Self::Value;
    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value;
    fn exp(&mut self, a: &Self::Value) -> Self::Value;
    fn log(&mut self, a: &Self::Value) -> Self::Value;
    fn relu(&mut self, a: &Self::Value) -> Self::Value;
    fn recip(&mut self, a: &Self::Value) -> Self::Value;
    /// Row sums as a `rows × 1` column.
    fn row_sum(&mut self, a: &Self::Value) -> Self::Value;
    /// Sum of all entries, `1 × 1`.
    fn sum(&mut self, a: &Self::Value) -> Self::Value;
    /// Mean of all entries, `1 × 1`.
    fn mean(&mut self, a: &Self::Value) -> Self::Value;
    /// Mean squared difference over all entries, `1 × 1`.
    fn mse(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

/// Value-only backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Backend for Eager {
    type Value = Matrix;

    fn constant(&mut self, m: Matrix) -> Matrix {
        m
    }
    fn param(&mut self, m: &Matrix) -> Matrix {
        m.clone()
    }
    fn value<'a>(&'a self, v: &'a Matrix) -> &'a Matrix {
        v
    }
    fn matmul(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.matmul(b)
    }
    fn matmul_t(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.matmul_t(b)
    }
    fn add(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.add(b)
    }
    fn sub(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.sub(b)
    }
    fn mul(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.hadamard(b)
    }
    fn add_row(&mut self, a: &Matrix, bias: &Matrix) -> Result<Matrix> {
        a.add_row(bias)
    }
    fn mul_col(&mut self, a: &Matrix, col: &Matrix) -> Result<Matrix> {
        a.mul_col(col)
    }
    fn scale(&mut self, a: &Matrix, s: f64) -> Matrix {
        a.scale(s)
    }
    fn sigmoid(&mut self, a: &Matrix) -> Matrix {
        a.map(sigmoid)
    }
    fn exp(&mut self, a: &Matrix) -> Matrix {
        a.map(f64::exp)
    }
    fn log(&mut self, a: &Matrix) -> Matrix {
        a.map(f64::ln)
    }
    fn relu(&mut self, a: &Matrix) -> Matrix {
        a.map(|x| x.max(0.0))
    }
    fn recip(&mut self, a: &Matrix) -> Matrix {
        a.map(|x| 1.0 / x)
    }
    fn row_sum(&mut self, a: &Matrix) -> Matrix {
        a.row_sums()
    }
    fn sum(&mut self, a: &Matrix) -> Matrix {
        Matrix::scalar(a.sum())
    }
    fn mean(&mut self, a: &Matrix) -> Matrix {
        Matrix::scalar(a.mean())
    }
    fn mse(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        let d = a.sub(b)?;
        Ok(Matrix::scalar(
            d.as_slice().iter().map(|v| v * v).sum::<f64>() / d.len() as f64,
        ))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Const,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    Recip(usize),
    RowSum(usize),
    Sum(usize),
    Mean(usize),
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Recording backend for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
    params: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to a leaf (parameter or constant); zero if the
    /// output does not depend on it. Interior adjoints are released during the
    /// sweep.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Gradients for every [`Backend::param`] leaf, in creation order.
    pub fn params(&self) -> Vec<Matrix> {
        self.params.iter().map(|&i| self.get(Var(i))).collect()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaves created with [`Backend::param`], in order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.params.iter().map(|&i| Var(i)).collect()
    }

    pub fn get(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &'static str, e: Error) -> Error {
        let detail = match e {
            Error::Shape(d) => d,
            other => other.to_string(),
        };
        Error::NodeShape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    /// Back-propagates from a scalar output with unit seed.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.backward_with(output, Matrix::scalar(1.0))
    }

    /// Back-propagates `seed` (shaped like `output`) through the tape.
    pub fn backward_with(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::BackwardBeforeForward {
                node: output.0,
                len: self.nodes.len(),
            });
        }
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::NodeShape {
                node: output.0,
                op: "backward",
                detail: format!("seed {:?} vs output {:?}", seed.shape(), out_shape),
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let v = |j: usize| &self.nodes[j].value;
            match node.op {
                Op::Leaf | Op::Const => {
                    adj[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    accumulate(&mut adj, a, g.matmul_t(v(b))?);
                    accumulate(&mut adj, b, v(a).t_matmul(&g)?);
                }
                Op::MatMulT(a, w) => {
                    accumulate(&mut adj, a, g.matmul(v(w))?);
                    accumulate(&mut adj, w, g.t_matmul(v(a))?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, b, g.clone());
                    accumulate(&mut adj, a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, b, g.scale(-1.0));
                    accumulate(&mut adj, a, g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut adj, a, g.hadamard(v(b))?);
                    accumulate(&mut adj, b, g.hadamard(v(a))?);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut adj, bias, g.col_sums());
                    accumulate(&mut adj, a, g);
                }
                Op::MulCol(a, col) => {
                    accumulate(&mut adj, col, g.hadamard(v(a))?.row_sums());
                    accumulate(&mut adj, a, g.mul_col(v(col))?);
                }
                Op::Scale(a, s) => accumulate(&mut adj, a, g.scale(s)),
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, "sigmoid'", |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut adj, a, d);
                }
                Op::Exp(a) => accumulate(&mut adj, a, g.hadamard(&node.value)?),
                Op::Log(a) => {
                    accumulate(&mut adj, a, g.zip_map(v(a), "log'", |g, x| g / x)?);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(v(a), "relu'", |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut adj, a, d);
                }
                Op::Recip(a) => {
                    let d = g.zip_map(&node.value, "recip'", |g, y| -g * y * y)?;
                    accumulate(&mut adj, a, d);
                }
                Op::RowSum(a) => {
                    let (r, c) = v(a).shape();
                    let ones = Matrix::filled(r, c, 1.0);
                    accumulate(&mut adj, a, ones.mul_col(&g)?);
                }
                Op::Sum(a) => {
                    let (r, c) = v(a).shape();
                    accumulate(&mut adj, a, Matrix::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = v(a).shape();
                    accumulate(&mut adj, a, Matrix::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::Mse(a, b) => {
                    let k = 2.0 * g.item() / v(a).len() as f64;
                    let d = v(a).zip_map(v(b), "mse'", |x, y| k * (x - y))?;
                    accumulate(&mut adj, b, d.scale(-1.0));
                    accumulate(&mut adj, a, d);
                }
            }
        }
        adj.resize(self.nodes.len(), None);
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            params: self.params.clone(),
        })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], i: usize, g: Matrix) {
    match &mut adj[i] {
        Some(existing) => {
            for (e, v) in existing.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *e += v;
            }
        }
        slot => *slot = Some(g),
    }
}

macro_rules! binary {
    ($self:ident, $name:literal, $variant:ident, $a:ident, $b:ident, $f:expr) => {{
        let value = $f(&$self.nodes[$a.0].value, &$self.nodes[$b.0].value)
            .map_err(|e| $self.shape_err($name, e))?;
        Ok($self.push(Op::$variant($a.0, $b.0), value))
    }};
}

impl Backend for Tape {
    type Value = Var;

    fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Const, m)
    }

    fn param(&mut self, m: &Matrix) -> Var {
        let v = self.push(Op::Leaf, m.clone());
        self.params.push(v.0);
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Matrix {
        &self.nodes[v.0].value
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        binary!(self, "matmul", MatMul, a, b, Matrix::matmul)
    }

    fn matmul_t(&mut self, a: &Var, b: &Var) -> Result<Var> {
        binary!(self, "matmul_t", MatMulT, a, b, Matrix::matmul_t)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        binary!(self, "add", Add, a, b, Matrix::add)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        binary!(self, "sub", Sub, a, b, Matrix::sub)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        binary!(self, "mul", Mul, a, b, Matrix::hadamard)
    }

    fn add_row(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        binary!(self, "add_row", AddRow, a, bias, Matrix::add_row)
    }

    fn mul_col(&mut self, a: &Var, col: &Var) -> Result<Var> {
        binary!(self, "mul_col", MulCol, a, col, Matrix::mul_col)
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let value = self.nodes[a.0].value.scale(s);
        self.push(Op::Scale(a.0, s), value)
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.map(sigmoid);
        self.push(Op::Sigmoid(a.0), value)
    }

    fn exp(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.map(f64::exp);
        self.push(Op::Exp(a.0), value)
    }

    fn log(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.map(f64::ln);
        self.push(Op::Log(a.0), value)
    }

    fn relu(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(Op::Relu(a.0), value)
    }

    fn recip(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.map(|x| 1.0 / x);
        self.push(Op::Recip(a.0), value)
    }

    fn row_sum(&mut self, a: &Var) -> Var {
        let value = self.nodes[a.0].value.row_sums();
        self.push(Op::RowSum(a.0), value)
    }

    fn sum(&mut self, a: &Var) -> Var {
        let value = Matrix::scalar(self.nodes[a.0].value.sum());
        self.push(Op::Sum(a.0), value)
    }

    fn mean(&mut self, a: &Var) -> Var {
        let value = Matrix::scalar(self.nodes[a.0].value.mean());
        self.push(Op::Mean(a.0), value)
    }

    fn mse(&mut self, a: &Var, b: &Var) -> Result<Var> {
        binary!(self, "mse", Mse, a, b, |x: &Matrix, y: &Matrix| Eager.mse(x, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let mut t = Tape::new();
        let i = t.constant(Matrix::identity(2));
        let v = t.constant(Matrix::column_vector(&[1.0, 2.0]));
        let out = t.matmul(&i, &v).unwrap();
        assert_eq!(t.get(out).as_slice(), &[1.0, 2.0]);

        let z = t.constant(Matrix::zeros(1, 3));
        let s = t.sigmoid(&z);
        assert!(t.get(s).as_slice().iter().all(|&x| x == 0.5));

        let x = t.constant(Matrix::scalar(0.3));
        let l = t.log(&x);
        let e = t.exp(&l);
        assert!((t.get(e).item() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn square_derivative() {
        let mut t = Tape::new();
        let x = t.param(&Matrix::scalar(3.0));
        let y = t.mul(&x, &x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).item(), 6.0);
    }

    #[test]
    fn squared_error_gradient_closed_form() {
        // d/dW ||Wx - y||² = 2 (Wx - y) xᵀ
        let w = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let x = Matrix::column_vector(&[0.7, -1.1]);
        let y = Matrix::column_vector(&[0.2, 0.4]);
        let mut t = Tape::new();
        let wv = t.param(&w);
        let xv = t.constant(x.clone());
        let yv = t.constant(y.clone());
        let wx = t.matmul(&wv, &xv).unwrap();
        let r = t.sub(&wx, &yv).unwrap();
        let sq = t.mul(&r, &r).unwrap();
        let loss = t.sum(&sq);
        let g = t.backward(loss).unwrap();
        let resid = w.matmul(&x).unwrap().sub(&y).unwrap();
        let expected = resid.matmul(&x.transpose()).unwrap().scale(2.0);
        assert!(g.get(wv).sub(&expected).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn backward_on_empty_tape_is_an_error() {
        let t = Tape::new();
        let err = t.backward(Var(0)).unwrap_err();
        assert!(matches!(err, Error::BackwardBeforeForward { .. }));
    }

    #[test]
    fn shape_error_names_node_and_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        match t.matmul(&a, &b).unwrap_err() {
            Error::NodeShape { node, op, detail } => {
                assert_eq!(node, 2);
                assert_eq!(op, "matmul");
                assert!(detail.contains("2x3"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unused_param_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.param(&Matrix::filled(2, 2, 1.0));
        let b = t.param(&Matrix::scalar(2.0));
        let s = t.sum(&b);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a), Matrix::zeros(2, 2));
        assert_eq!(g.params().len(), 2);
    }
}
