//! Single-hidden-layer perceptron with sigmoid activations and manual
//! backpropagation. Weights live in a [`ParamStore`] under prefixed names.

use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use thiserror::Error;

use crate::params::{Gradients, ParamError, ParamStore, Tensor};
use crate::special::sigmoid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Names of the four parameter tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub h_weights: String,
    pub h_biases: String,
    pub out_weights: String,
    pub out_biases: String,
}

/// Activations retained by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub h_weights: Vec<f64>,
    pub h_biases: Vec<f64>,
    pub out_weights: Vec<f64>,
    pub out_biases: Vec<f64>,
    pub input: Vec<f64>,
}

struct Dims {
    input: usize,
    hidden: usize,
    output: usize,
}

impl Mlp {
    pub fn new(prefix: &str) -> Self {
        Self {
            h_weights: format!("{prefix}h_weights"),
            h_biases: format!("{prefix}h_biases"),
            out_weights: format!("{prefix}out_weights"),
            out_biases: format!("{prefix}out_biases"),
        }
    }

    /// Adds freshly initialized tensors to `params`: weights drawn from
    /// Normal(0, 1/sqrt(fan_in)), biases zero.
    pub fn init<R: Rng + ?Sized>(
        &self,
        params: &mut ParamStore,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) {
        let mut draw = |rows: usize, cols: usize| {
            let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("positive std");
            Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
        };
        params.insert(self.h_weights.clone(), draw(hidden, input));
        params.insert(self.out_weights.clone(), draw(output, hidden));
        params.insert(self.h_biases.clone(), Tensor::vector(vec![0.0; hidden]));
        params.insert(self.out_biases.clone(), Tensor::vector(vec![0.0; output]));
    }

    /// Adds all-zero tensors to `params`.
    pub fn init_zeros(&self, params: &mut ParamStore, input: usize, hidden: usize, output: usize) {
        params.insert(self.h_weights.clone(), Tensor::zeros(&[hidden, input]));
        params.insert(self.out_weights.clone(), Tensor::zeros(&[output, hidden]));
        params.insert(self.h_biases.clone(), Tensor::zeros(&[hidden]));
        params.insert(self.out_biases.clone(), Tensor::zeros(&[output]));
    }

    fn dims(&self, params: &ParamStore) -> Result<Dims, NnetError> {
        let hw = params.get(&self.h_weights)?;
        let ow = params.get(&self.out_weights)?;
        let hb = params.get(&self.h_biases)?;
        let ob = params.get(&self.out_biases)?;
        let (&[hidden, input], &[output, hidden2]) = (hw.shape(), ow.shape()) else {
            return Err(NnetError::ShapeMismatch("weights must be matrices".into()));
        };
        if hidden != hidden2 || hb.shape() != [hidden] || ob.shape() != [output] {
            return Err(NnetError::ShapeMismatch(format!(
                "h_weights {:?}, h_biases {:?}, out_weights {:?}, out_biases {:?}",
                hw.shape(),
                hb.shape(),
                ow.shape(),
                ob.shape()
            )));
        }
        Ok(Dims {
            input,
            hidden,
            output,
        })
    }

    pub fn input_len(&self, params: &ParamStore) -> Result<usize, NnetError> {
        Ok(self.dims(params)?.input)
    }

    /// `W_out · sigmoid(W_h · input + b_h) + b_out`.
    pub fn forward(&self, params: &ParamStore, input: &[f64]) -> Result<(Vec<f64>, MlpCache), NnetError> {
        let dims = self.dims(params)?;
        if input.len() != dims.input {
            return Err(NnetError::ShapeMismatch(format!(
                "input has length {}, network expects {}",
                input.len(),
                dims.input
            )));
        }
        let hw = params.data(&self.h_weights)?;
        let hb = params.data(&self.h_biases)?;
        let ow = params.data(&self.out_weights)?;
        let ob = params.data(&self.out_biases)?;
        let hidden: Vec<f64> = (0..dims.hidden)
            .map(|j| {
                let row = &hw[j * dims.input..(j + 1) * dims.input];
                let pre: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + hb[j];
                sigmoid(pre)
            })
            .collect();
        let output = (0..dims.output)
            .map(|o| {
                let row = &ow[o * dims.hidden..(o + 1) * dims.hidden];
                row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + ob[o]
            })
            .collect();
        Ok((
            output,
            MlpCache {
                input: input.to_vec(),
                hidden,
            },
        ))
    }

    /// Gradients of `output_grad · output` with respect to every parameter
    /// tensor and the input.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &MlpCache,
        output_grad: &[f64],
    ) -> Result<MlpGrads, NnetError> {
        let dims = self.dims(params)?;
        if output_grad.len() != dims.output
            || cache.hidden.len() != dims.hidden
            || cache.input.len() != dims.input
        {
            return Err(NnetError::ShapeMismatch(
                "output gradient or cache does not match the network".into(),
            ));
        }
        let hw = params.data(&self.h_weights)?;
        let ow = params.data(&self.out_weights)?;

        let mut out_weights = vec![0.0; dims.output * dims.hidden];
        let mut hidden_grad = vec![0.0; dims.hidden];
        for (o, &g) in output_grad.iter().enumerate() {
            for j in 0..dims.hidden {
                out_weights[o * dims.hidden + j] = g * cache.hidden[j];
                hidden_grad[j] += g * ow[o * dims.hidden + j];
            }
        }
        let pre_grad: Vec<f64> = hidden_grad
            .iter()
            .zip(&cache.hidden)
            .map(|(g, h)| g * h * (1.0 - h))
            .collect();
        let mut h_weights = vec![0.0; dims.hidden * dims.input];
        let mut input = vec![0.0; dims.input];
        for (j, &g) in pre_grad.iter().enumerate() {
            for i in 0..dims.input {
                h_weights[j * dims.input + i] = g * cache.input[i];
                input[i] += g * hw[j * dims.input + i];
            }
        }
        Ok(MlpGrads {
            h_weights,
            h_biases: pre_grad,
            out_weights,
            out_biases: output_grad.to_vec(),
            input,
        })
    }

    /// Adds parameter gradients into an accumulator.
    pub fn accumulate(&self, acc: &mut Gradients, grads: &MlpGrads) -> Result<(), ParamError> {
        acc.add_slice(&self.h_weights, &grads.h_weights)?;
        acc.add_slice(&self.h_biases, &grads.h_biases)?;
        acc.add_slice(&self.out_weights, &grads.out_weights)?;
        acc.add_slice(&self.out_biases, &grads.out_biases)
    }

    /// Backpropagates `output_grad` and adds the result into `acc`.
    pub fn backprop_into(
        &self,
        params: &ParamStore,
        cache: &MlpCache,
        output_grad: &[f64],
        acc: &mut Gradients,
    ) -> Result<(), NnetError> {
        let grads = self.backward(params, cache, output_grad)?;
        Ok(self.accumulate(acc, &grads)?)
    }
}
