use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, LayerNormCache};
use super::params::Parameterized;
use crate::grid::Grid;

pub fn normal_grid(shape: &[usize], std: f64, rng: &mut impl Rng) -> Grid {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    Grid::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape product")
}

/// Same-padded 1-D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: Grid,
    pub bias: Grid,
    pub dilation: usize,
}

impl Conv1d {
    pub fn zeros(c_in: usize, c_out: usize, k: usize, dilation: usize) -> Self {
        Self {
            kernel: Grid::zeros(&[c_out, c_in, k]),
            bias: Grid::zeros(&[c_out]),
            dilation,
        }
    }

    /// LeCun-normal init scaled by `gain`, zero bias.
    pub fn init(c_in: usize, c_out: usize, k: usize, dilation: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let std = gain / ((c_in * k) as f64).sqrt();
        Self {
            kernel: normal_grid(&[c_out, c_in, k], std, rng),
            bias: Grid::zeros(&[c_out]),
            dilation,
        }
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn forward(&self, x: &Grid) -> Grid {
        ops::conv1d_forward(x, &self.kernel, Some(&self.bias), self.dilation)
    }

    pub fn backward(&self, x: &Grid, grad_out: &Grid, grads: &mut Conv1d) -> Grid {
        ops::conv1d_backward(
            x,
            &self.kernel,
            self.dilation,
            grad_out,
            &mut grads.kernel,
            Some(&mut grads.bias),
        )
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<(String, &Grid)> {
        vec![("kernel".into(), &self.kernel), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        vec![
            ("kernel".into(), &mut self.kernel),
            ("bias".into(), &mut self.bias),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Grid,
    pub shift: Grid,
}

impl LayerNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gain: Grid::filled(&[c], 1.0),
            shift: Grid::zeros(&[c]),
        }
    }

    pub fn forward(&self, x: &Grid) -> (Grid, LayerNormCache) {
        ops::layer_norm_forward(x, &self.gain, &self.shift)
    }

    pub fn backward(&self, cache: &LayerNormCache, grad_out: &Grid, grads: &mut LayerNorm) -> Grid {
        ops::layer_norm_backward(cache, &self.gain, grad_out, &mut grads.gain, &mut grads.shift)
    }
}

impl Parameterized for LayerNorm {
    fn params(&self) -> Vec<(String, &Grid)> {
        vec![("gain".into(), &self.gain), ("shift".into(), &self.shift)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        vec![
            ("gain".into(), &mut self.gain),
            ("shift".into(), &mut self.shift),
        ]
    }
}

/// Bias-free two-layer perceptron with a ReLU hidden layer of width `C/r`.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub w1: Grid,
    pub w2: Grid,
}

impl Mlp2 {
    pub fn zeros(c: usize, hidden: usize) -> Self {
        Self {
            w1: Grid::zeros(&[hidden, c]),
            w2: Grid::zeros(&[c, hidden]),
        }
    }

    pub fn init(c: usize, hidden: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Self {
            w1: normal_grid(&[hidden, c], gain / (c as f64).sqrt(), rng),
            w2: normal_grid(&[c, hidden], gain / (hidden as f64).sqrt(), rng),
        }
    }

    pub fn forward(&self, v: &[f64]) -> (Grid, Vec<f64>) {
        ops::mlp2_forward(v, &self.w1, &self.w2)
    }

    pub fn backward(&self, v: &[f64], pre: &[f64], grad_out: &[f64], grads: &mut Mlp2) -> Vec<f64> {
        ops::mlp2_backward(v, pre, &self.w1, &self.w2, grad_out, &mut grads.w1, &mut grads.w2)
    }
}

impl Parameterized for Mlp2 {
    fn params(&self) -> Vec<(String, &Grid)> {
        vec![("w1".into(), &self.w1), ("w2".into(), &self.w2)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Grid)> {
        vec![("w1".into(), &mut self.w1), ("w2".into(), &mut self.w2)]
    }
}
