//! Fixed-topology feed-forward networks with hand-written reverse mode.
//!
//! Weights are stored `in × out` so a batch `x` (one sample per row) maps to
//! `x · W + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
    XavierUniform,
    Zeros,
}

/// Per-layer values kept by [`MlpParams::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients with the same layout as the [`MlpParams`] they differentiate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

pub fn init_params(seed: u64, layer_dims: &[usize], scheme: InitScheme) -> Result<MlpParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with_rng(&mut rng, layer_dims, scheme)
}

/// Hidden layers use ReLU, the output layer is linear.
pub fn init_params_with_rng<R: Rng + ?Sized>(
    rng: &mut R,
    layer_dims: &[usize],
    scheme: InitScheme,
) -> Result<MlpParams> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid(format!(
            "an MLP needs at least input and output widths, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::invalid(format!("zero layer width in {layer_dims:?}")));
    }
    let n_layers = layer_dims.len() - 1;
    let layers = layer_dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = match scheme {
                InitScheme::Zeros => Matrix::zeros(fan_in, fan_out),
                InitScheme::XavierUniform => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let values = (0..fan_in * fan_out)
                        .map(|_| rng.random_range(-a..a))
                        .collect();
                    Matrix::from_vec(fan_in, fan_out, values).expect("sized above")
                }
            };
            Dense {
                weight,
                bias: vec![0.0; fan_out],
                activation: if i + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Dense::output_dim));
        d
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Overwrites all parameters from a flat vector in [`Self::flatten`] order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.as_mut_slice().fill(0.0);
            last.bias.fill(0.0);
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "mlp_forward",
                left: x.shape(),
                right: (self.input_dim(), self.output_dim()),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = matmul(&h, &layer.weight)?;
            pre.add_row_vector(&layer.bias);
            if !pre.is_finite() {
                return Err(Error::non_finite(format!("mlp layer {i} output")));
            }
            let out = match layer.activation {
                Activation::Identity => pre.clone(),
                act => pre.map(|v| act.apply(v)),
            };
            inputs.push(std::mem::replace(&mut h, out));
            pre_activations.push(pre);
        }
        Ok((
            h,
            MlpCache {
                inputs,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Reverse-mode pass: given `dy = ∂L/∂y`, returns `∂L/∂x` and parameter gradients.
    pub fn backward(&self, cache: &MlpCache, dy: &Matrix) -> Result<(Matrix, Gradients)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "cache holds {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        let batch = cache.inputs.first().map_or(0, Matrix::rows);
        if dy.shape() != (batch, self.output_dim()) {
            return Err(Error::Shape {
                op: "mlp_backward",
                left: dy.shape(),
                right: (batch, self.output_dim()),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                let pre = cache.pre_activations[i].as_slice();
                for (d, &p) in delta.as_mut_slice().iter_mut().zip(pre) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let dw = matmul_tn(&cache.inputs[i], &delta)?;
            let db = delta.column_sums();
            let dx = matmul_nt(&delta, &layer.weight)?;
            grads.push(LayerGrad {
                weight: dw,
                bias: db,
            });
            delta = dx;
        }
        grads.reverse();
        Ok((delta, Gradients { layers: grads }))
    }
}

/// Free-function form of [`MlpParams::forward`].
pub fn mlp_forward(params: &MlpParams, x: &Matrix) -> Result<(Matrix, MlpCache)> {
    params.forward(x)
}

/// Free-function form of [`MlpParams::backward`].
pub fn mlp_backward(
    params: &MlpParams,
    cache: &MlpCache,
    dy: &Matrix,
) -> Result<(Matrix, Gradients)> {
    params.backward(cache, dy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: &[&[f64]], b: &[f64], act: Activation) -> Dense {
        Dense {
            weight: Matrix::from_rows(w).unwrap(),
            bias: b.to_vec(),
            activation: act,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = init_params(1, &[3, 5, 2], InitScheme::Zeros).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        let y = p.predict(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_identity_layer_is_identity() {
        let p = MlpParams {
            layers: vec![Dense {
                weight: Matrix::identity(3),
                bias: vec![0.0; 3],
                activation: Activation::Identity,
            }],
        };
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(p.predict(&x).unwrap(), x);
    }

    #[test]
    fn two_layer_forward_matches_hand_evaluation() {
        // h = relu(x W1 + b1), y = h W2 + b2
        let p = MlpParams {
            layers: vec![
                dense(&[&[1.0, -1.0], &[2.0, 0.5]], &[0.5, -1.0], Activation::Relu),
                dense(&[&[3.0], &[-2.0]], &[0.25], Activation::Identity),
            ],
        };
        let x = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 1.0]]).unwrap();
        // row 0: pre = [1+4+0.5, -1+1-1] = [5.5, -1] -> h = [5.5, 0] -> y = 16.5+0.25
        // row 1: pre = [-1+2+0.5, 1+0.5-1] = [1.5, 0.5] -> h = [1.5, 0.5] -> y = 4.5-1+0.25
        let y = p.predict(&x).unwrap();
        assert_eq!(y.as_slice(), &[16.75, 3.75]);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let p = init_params(7, &[4, 6, 3], InitScheme::XavierUniform).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3, 0.4], [1.0, -1.0, 0.5, 0.0]]).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let (dx, g) = p.backward(&cache, &Matrix::zeros(2, 3)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.is_zero());
    }

    #[test]
    fn affine_layer_gradients_by_hand() {
        // y = x W + b, L = sum(dy ⊙ y): dW = xᵀ dy, db = colsum(dy), dx = dy Wᵀ
        let p = MlpParams {
            layers: vec![dense(
                &[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]],
                &[0.0, 0.0],
                Activation::Identity,
            )],
        };
        let x = Matrix::from_rows(&[[1.0, 0.0, -1.0], [2.0, 1.0, 0.0]]).unwrap();
        let dy = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0]]).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let (dx, g) = p.backward(&cache, &dy).unwrap();
        assert_eq!(
            g.layers[0].weight,
            Matrix::from_rows(&[[2.0, 3.0], [0.5, 2.0], [-1.0, 1.0]]).unwrap()
        );
        assert_eq!(g.layers[0].bias, vec![1.5, 1.0]);
        assert_eq!(
            dx,
            Matrix::from_rows(&[[-1.0, -1.0, -1.0], [4.5, 9.5, 14.5]]).unwrap()
        );
    }

    #[test]
    fn relu_gates_negative_preactivations() {
        let p = MlpParams {
            layers: vec![dense(&[&[1.0, -1.0]], &[0.0, 0.0], Activation::Relu)],
        };
        let x = Matrix::from_rows(&[[2.0]]).unwrap();
        let (_, cache) = p.forward(&x).unwrap();
        let (dx, g) = p.backward(&cache, &Matrix::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        // second unit has pre-activation -2, so no gradient flows through it
        assert_eq!(g.layers[0].weight.as_slice(), &[2.0, 0.0]);
        assert_eq!(g.layers[0].bias, vec![1.0, 0.0]);
        assert_eq!(dx.as_slice(), &[1.0]);
    }

    #[test]
    fn non_finite_output_names_layer() {
        let p = MlpParams {
            layers: vec![
                dense(&[&[1.0]], &[0.0], Activation::Relu),
                dense(&[&[f64::MAX]], &[0.0], Activation::Identity),
            ],
        };
        let x = Matrix::from_rows(&[[10.0]]).unwrap();
        let err = p.forward(&x).unwrap_err().to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn init_is_deterministic_with_zero_biases_and_bounded_weights() {
        let dims = [24, 20, 16];
        let a = init_params(42, &dims, InitScheme::XavierUniform).unwrap();
        let b = init_params(42, &dims, InitScheme::XavierUniform).unwrap();
        assert_eq!(a, b);
        for l in &a.layers {
            assert!(l.bias.iter().all(|&v| v == 0.0));
            let bound = (6.0 / (l.input_dim() + l.output_dim()) as f64).sqrt();
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= bound));
        }
        let c = init_params(43, &dims, InitScheme::XavierUniform).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_empty_dims() {
        assert!(init_params(0, &[], InitScheme::XavierUniform).is_err());
        assert!(init_params(0, &[3], InitScheme::XavierUniform).is_err());
    }

    #[test]
    fn backward_rejects_mismatched_cotangent() {
        let p = init_params(3, &[2, 3], InitScheme::XavierUniform).unwrap();
        let (_, cache) = p.forward(&Matrix::zeros(4, 2)).unwrap();
        assert!(p.backward(&cache, &Matrix::zeros(4, 2)).is_err());
    }
}
