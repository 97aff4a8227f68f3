//! Multilayer perceptrons: tanh hidden layers, linear output.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::ad::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Shape};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        let cfg = Self { input_dim, hidden, output_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!("MLP dims must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each layer in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weight: Matrix,
    /// `1 x out`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<Layer>,
}

/// Tape handles for one network's parameters.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
}

impl MlpVars {
    pub fn iter(&self) -> impl Iterator<Item = Var> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

impl Mlp {
    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let weight = Matrix::from_fn(fan_out, fan_in, |_, _| dist.sample(rng));
                Layer { weight, bias: Matrix::zeros(1, fan_out) }
            })
            .collect();
        Ok(Self { config: config.clone(), layers })
    }

    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(config: MlpConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::InvalidArgument(format!("{} layers for config {config:?}", layers.len())));
        }
        for ((fan_in, fan_out), l) in dims.iter().zip(&layers) {
            if l.weight.shape() != Shape(*fan_out, *fan_in) || l.bias.shape() != Shape(1, *fan_out) {
                return Err(Error::shape("mlp layer", l.weight.shape(), Shape(*fan_out, *fan_in)));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Puts the parameters on `tape`, as gradient-receiving leaves or as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.parameter(l.weight.clone()), tape.parameter(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        MlpVars { layers }
    }

    /// Batched forward on the tape: each row of `input` is one example.
    pub fn forward_on(&self, tape: &mut Tape, vars: &MlpVars, input: Var) -> Result<Var> {
        if input.cols() != self.config.input_dim {
            return Err(Error::shape("mlp input", input.shape(), Shape(input.rows(), self.config.input_dim)));
        }
        let last = vars.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.affine(h, w, b)?;
            if i < last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    /// Plain numeric forward.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.config.input_dim {
            return Err(Error::shape("mlp input", input.shape(), Shape(input.rows(), self.config.input_dim)));
        }
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.matmul_t(&l.weight)?;
            let b = l.bias.as_slice();
            for r in 0..z.rows() {
                for (v, &bb) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bb;
                }
            }
            h = if i < last { z.map(f64::tanh) } else { z };
        }
        Ok(h)
    }
}
