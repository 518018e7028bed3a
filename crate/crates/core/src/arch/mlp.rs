use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{random_normal, Backend, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Identity,
}

/// Shape of a fully connected network. Hidden layers always use a sigmoid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden: Vec<usize>,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(in_dim: usize, out_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            in_dim,
            out_dim,
            hidden,
            output_activation: Activation::Sigmoid,
        }
    }

    /// One affine layer followed by a sigmoid.
    pub fn perceptron(in_dim: usize, out_dim: usize) -> Self {
        Self::new(in_dim, out_dim, Vec::new())
    }

    pub fn with_output(mut self, act: Activation) -> Self {
        self.output_activation = act;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(format!("MLP dims must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.in_dim];
        dims.extend(&self.hidden);
        dims.push(self.out_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }
}

/// Affine layer `x ↦ W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Weights and biases drawn i.i.d. from `N(0, std²)`.
    pub fn sample(spec: MlpSpec, std: f64, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(out, inp)| Dense {
                weight: random_normal(out, inp, 0.0, std, rng),
                bias: random_normal(1, out, 0.0, std, rng),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Builds an MLP from explicit layers, checking them against `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if dims.len() != layers.len()
            || dims
                .iter()
                .zip(&layers)
                .any(|(&(o, i), l)| l.weight.shape() != (o, i) || l.bias.shape() != (1, o))
        {
            return Err(Error::Config("layer shapes do not match MLP spec".into()));
        }
        Ok(Self { spec, layers })
    }

    pub fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Parameter-free elementwise maps, used for hand-built teachers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Elementwise {
    Identity,
    Log,
    Exp,
    Sigmoid,
}

/// A position-wise map: a learnable MLP or a fixed elementwise function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Map {
    Mlp(Mlp),
    Fixed { dim: usize, func: Elementwise },
}

impl Map {
    pub fn in_dim(&self) -> usize {
        match self {
            Map::Mlp(m) => m.spec.in_dim,
            Map::Fixed { dim, .. } => *dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Map::Mlp(m) => m.spec.out_dim,
            Map::Fixed { dim, .. } => *dim,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Map::Fixed {
            dim,
            func: Elementwise::Identity,
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            Map::Mlp(m) => m.params(),
            Map::Fixed { .. } => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Map::Mlp(m) => m.params_mut(),
            Map::Fixed { .. } => Vec::new(),
        }
    }

    /// Registers parameters with the backend in [`Map::params`] order.
    pub fn bind<B: Backend>(&self, b: &mut B) -> MapVars<B::Value> {
        match self {
            Map::Mlp(m) => MapVars::Mlp {
                layers: m
                    .layers
                    .iter()
                    .map(|l| (b.param(&l.weight), b.param(&l.bias)))
                    .collect(),
                output: m.spec.output_activation,
                in_dim: m.spec.in_dim,
            },
            Map::Fixed { dim, func } => MapVars::Fixed {
                func: *func,
                dim: *dim,
            },
        }
    }
}

/// A [`Map`] whose parameters live on a backend.
#[derive(Debug, Clone)]
pub enum MapVars<V> {
    Mlp {
        layers: Vec<(V, V)>,
        output: Activation,
        in_dim: usize,
    },
    Fixed {
        func: Elementwise,
        dim: usize,
    },
}

impl<V: Clone> MapVars<V> {
    pub fn apply<B: Backend<Value = V>>(&self, b: &mut B, x: &V) -> Result<V> {
        let cols = b.value(x).cols();
        match self {
            MapVars::Mlp {
                layers,
                output,
                in_dim,
            } => {
                if cols != *in_dim {
                    return Err(Error::Shape(format!("MLP expects {in_dim} inputs, got {cols}")));
                }
                let mut h = x.clone();
                for (idx, (w, bias)) in layers.iter().enumerate() {
                    let z = b.matmul_t(&h, w)?;
                    let z = b.add_row(&z, bias)?;
                    let last = idx + 1 == layers.len();
                    h = if !last || *output == Activation::Sigmoid {
                        b.sigmoid(&z)
                    } else {
                        z
                    };
                }
                Ok(h)
            }
            MapVars::Fixed { func, dim } => {
                if cols != *dim {
                    return Err(Error::Shape(format!("map expects {dim} inputs, got {cols}")));
                }
                Ok(match func {
                    Elementwise::Identity => x.clone(),
                    Elementwise::Log => b.log(x),
                    Elementwise::Exp => b.exp(x),
                    Elementwise::Sigmoid => b.sigmoid(x),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sigmoid, Eager};

    #[test]
    fn mlp_matches_hand_unrolled_layers() {
        let mut rng = RngStream::new(3, "mlp");
        let mlp = Mlp::sample(MlpSpec::new(3, 2, vec![4, 4]), 0.6, &mut rng).unwrap();
        let x = [0.1, 0.7, -0.4];

        let mut h = x.to_vec();
        for l in &mlp.layers {
            let (out, inp) = l.weight.shape();
            let mut next = vec![0.0; out];
            for o in 0..out {
                let mut acc = l.bias[(0, o)];
                for i in 0..inp {
                    acc += l.weight[(o, i)] * h[i];
                }
                next[o] = sigmoid(acc);
            }
            h = next;
        }

        let map = Map::Mlp(mlp);
        let mut e = Eager;
        let vars = map.bind(&mut e);
        let y = vars.apply(&mut e, &Matrix::row_vector(&x)).unwrap();
        for (a, b) in y.as_slice().iter().zip(&h) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_output_skips_final_sigmoid() {
        let spec = MlpSpec::perceptron(1, 1).with_output(Activation::Identity);
        let mlp = Mlp::from_layers(
            spec,
            vec![Dense {
                weight: Matrix::scalar(2.0),
                bias: Matrix::scalar(1.0),
            }],
        )
        .unwrap();
        let map = Map::Mlp(mlp);
        let mut e = Eager;
        let v = map.bind(&mut e);
        assert_eq!(v.apply(&mut e, &Matrix::scalar(3.0)).unwrap().item(), 7.0);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(MlpSpec::new(0, 2, vec![]).validate().is_err());
        assert!(MlpSpec::new(2, 2, vec![3, 0]).validate().is_err());
    }
}
