use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{fill_normal, push_param, push_param_mut, ParamView, Parameters};

/// Row-vector affine map `y = x W (+ b)` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize, bias: bool) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: bias.then(|| Array1::zeros(output)),
        }
    }

    /// Fan-in scaled init with the given gain (`gain^2 / fan_in` variance).
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, bias: bool, gain: f64, rng: &mut R) -> Self {
        let mut lin = Self::zeros(input, output, bias);
        fill_normal(&mut lin.weight, gain / (input as f64).sqrt(), rng);
        lin
    }

    pub fn from_weight(weight: Array2<f64>) -> Self {
        Self { weight, bias: None }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward_vec(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut y = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            y.rows_mut().into_iter().for_each(|mut r| r += b);
        }
        y
    }

    pub fn backward_vec(&self, x: ArrayView1<f64>, grad_out: ArrayView1<f64>, grads: &mut Self) -> Array1<f64> {
        let outer = x
            .insert_axis(Axis(1))
            .dot(&grad_out.insert_axis(Axis(0)));
        grads.weight += &outer;
        if let Some(b) = &mut grads.bias {
            *b += &grad_out;
        }
        self.weight.dot(&grad_out)
    }

    pub fn backward(&self, x: ArrayView2<f64>, grad_out: ArrayView2<f64>, grads: &mut Self) -> Array2<f64> {
        grads.weight += &x.t().dot(&grad_out);
        if let Some(b) = &mut grads.bias {
            *b += &grad_out.sum_axis(Axis(0));
        }
        grad_out.dot(&self.weight.t())
    }
}

impl Parameters for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        push_param(out, prefix, "weight", &self.weight);
        if let Some(b) = &self.bias {
            push_param(out, prefix, "bias", b);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        push_param_mut(out, &mut self.weight);
        if let Some(b) = &mut self.bias {
            push_param_mut(out, b);
        }
    }
}
