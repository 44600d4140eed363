//! RealNVP flow over latent vectors: affine coupling layers, exact
//! log-determinants, and negative log-density anomaly scores.

mod train;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, Matrix, MlpCache, MlpParams};

pub use train::{flow_train, FlowCheckpoint, FlowConfig, FlowTrainOutput};

/// Bound of the scaled-tanh clamp applied to the scale network output.
pub const DEFAULT_SCALE_CLAMP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPattern {
    /// Pass-through at even indices.
    Alternating,
    /// Pass-through at odd indices.
    AlternatingShifted,
    /// Pass-through on the first `ceil(d/2)` indices.
    Half,
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskPattern::Alternating => "alternating",
            MaskPattern::AlternatingShifted => "alternating_shifted",
            MaskPattern::Half => "half",
        })
    }
}

impl FromStr for MaskPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(MaskPattern::Alternating),
            "alternating_shifted" => Ok(MaskPattern::AlternatingShifted),
            "half" => Ok(MaskPattern::Half),
            other => Err(Error::invalid(format!("unknown mask pattern {other:?}"))),
        }
    }
}

/// `true` marks a pass-through coordinate.
pub fn make_mask(dim: usize, pattern: MaskPattern) -> Result<Vec<bool>> {
    if dim < 2 {
        return Err(Error::invalid(format!("mask dimension must be >= 2, got {dim}")));
    }
    Ok((0..dim)
        .map(|i| match pattern {
            MaskPattern::Alternating => i % 2 == 0,
            MaskPattern::AlternatingShifted => i % 2 == 1,
            MaskPattern::Half => i < dim.div_ceil(2),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingLayer {
    /// Pattern the mask was built from, if any.
    pub pattern: Option<MaskPattern>,
    pub mask: Vec<bool>,
    pub s_net: MlpParams,
    pub t_net: MlpParams,
    /// `s = c·tanh(raw/c)` when set; raw network output otherwise.
    pub clamp: Option<f64>,
}

/// Intermediate values of one coupling forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct CouplingCache {
    x_t: Matrix,
    raw_s: Matrix,
    exp_s: Matrix,
    s_cache: MlpCache,
    t_cache: MlpCache,
}

impl CouplingLayer {
    pub fn new(mask: Vec<bool>, s_net: MlpParams, t_net: MlpParams, clamp: Option<f64>) -> Result<Self> {
        let n_pass = mask.iter().filter(|&&m| m).count();
        let n_trans = mask.len() - n_pass;
        if n_pass == 0 || n_trans == 0 {
            return Err(Error::invalid("mask needs at least one pass-through and one transformed coordinate"));
        }
        for (name, net) in [("s", &s_net), ("t", &t_net)] {
            if net.input_dim() != n_pass || net.output_dim() != n_trans {
                return Err(Error::invalid(format!(
                    "{name}-net maps {} -> {}, coupling needs {n_pass} -> {n_trans}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        if let Some(c) = clamp {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("scale clamp must be positive, got {c}")));
            }
        }
        Ok(CouplingLayer {
            pattern: None,
            mask,
            s_net,
            t_net,
            clamp,
        })
    }

    pub fn with_pattern(mut self, pattern: MaskPattern) -> Self {
        self.pattern = Some(pattern);
        self
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    fn pass_idx(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }

    fn trans_idx(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| !self.mask[i]).collect()
    }

    fn scale(&self, raw: f64) -> f64 {
        match self.clamp {
            Some(c) => c * (raw / c).tanh(),
            None => raw,
        }
    }

    fn scale_grad(&self, raw: f64) -> f64 {
        match self.clamp {
            Some(c) => {
                let th = (raw / c).tanh();
                1.0 - th * th
            }
            None => 1.0,
        }
    }

    fn check_input(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.dim() {
            return Err(Error::Shape {
                op: "coupling",
                left: z.shape(),
                right: (z.rows(), self.dim()),
            });
        }
        Ok(())
    }

    /// Batch forward pass: rows are samples. Returns outputs, per-row
    /// log-determinants and the cache needed by [`Self::backward`].
    pub fn forward_batch(&self, z: &Matrix) -> Result<(Matrix, Vec<f64>, CouplingCache)> {
        self.check_input(z)?;
        if !z.is_finite() {
            return Err(Error::non_finite("coupling input"));
        }
        let (pass, trans) = (self.pass_idx(), self.trans_idx());
        let x_p = z.select_columns(&pass);
        let x_t = z.select_columns(&trans);
        let (raw_s, s_cache) = self.s_net.forward(&x_p)?;
        let (t, t_cache) = self.t_net.forward(&x_p)?;
        let mut exp_s = raw_s.clone();
        let mut y_t = x_t.clone();
        let mut logdet = vec![0.0; z.rows()];
        for r in 0..z.rows() {
            for c in 0..trans.len() {
                let s = self.scale(raw_s.get(r, c));
                let e = s.exp();
                exp_s.set(r, c, e);
                y_t.set(r, c, x_t.get(r, c) * e + t.get(r, c));
                logdet[r] += s;
            }
        }
        if !y_t.is_finite() {
            return Err(Error::non_finite("transformed coordinates (scale overflow)"));
        }
        let mut out = z.clone();
        out.scatter_columns(&trans, &y_t);
        Ok((
            out,
            logdet,
            CouplingCache {
                x_t,
                raw_s,
                exp_s,
                s_cache,
                t_cache,
            },
        ))
    }

    /// Exact inverse of [`Self::forward_batch`].
    pub fn inverse_batch(&self, y: &Matrix) -> Result<Matrix> {
        self.check_input(y)?;
        if !y.is_finite() {
            return Err(Error::non_finite("coupling inverse input"));
        }
        let (pass, trans) = (self.pass_idx(), self.trans_idx());
        let x_p = y.select_columns(&pass);
        let y_t = y.select_columns(&trans);
        let raw_s = self.s_net.predict(&x_p)?;
        let t = self.t_net.predict(&x_p)?;
        let mut x_t = y_t.clone();
        for r in 0..y.rows() {
            for c in 0..trans.len() {
                let s = self.scale(raw_s.get(r, c));
                x_t.set(r, c, (y_t.get(r, c) - t.get(r, c)) * (-s).exp());
            }
        }
        if !x_t.is_finite() {
            return Err(Error::non_finite("coupling inverse"));
        }
        let mut out = y.clone();
        out.scatter_columns(&trans, &x_t);
        Ok(out)
    }

    /// Reverse-mode pass. `dy` is the cotangent of the outputs and `dlogdet`
    /// the cotangent of each row's log-determinant.
    pub fn backward(&self, cache: &CouplingCache, dy: &Matrix, dlogdet: &[f64]) -> Result<(Matrix, Gradients, Gradients)> {
        let n = cache.x_t.rows();
        if dy.shape() != (n, self.dim()) || dlogdet.len() != n {
            return Err(Error::Shape {
                op: "coupling_backward",
                left: dy.shape(),
                right: (n, self.dim()),
            });
        }
        let (pass, trans) = (self.pass_idx(), self.trans_idx());
        let dy_t = dy.select_columns(&trans);
        let mut dx_t = dy_t.clone();
        let mut d_raw = dy_t.clone();
        for r in 0..n {
            for c in 0..trans.len() {
                let e = cache.exp_s.get(r, c);
                let g = dy_t.get(r, c);
                dx_t.set(r, c, g * e);
                let ds = g * cache.x_t.get(r, c) * e + dlogdet[r];
                d_raw.set(r, c, ds * self.scale_grad(cache.raw_s.get(r, c)));
            }
        }
        let (dxp_s, gs) = self.s_net.backward(&cache.s_cache, &d_raw)?;
        let (dxp_t, gt) = self.t_net.backward(&cache.t_cache, &dy_t)?;
        let mut dx_p = dy.select_columns(&pass);
        for ((d, a), b) in dx_p
            .as_mut_slice()
            .iter_mut()
            .zip(dxp_s.as_slice())
            .zip(dxp_t.as_slice())
        {
            *d += a + b;
        }
        let mut dx = Matrix::zeros(n, self.dim());
        dx.scatter_columns(&pass, &dx_p);
        dx.scatter_columns(&trans, &dx_t);
        Ok((dx, gs, gt))
    }
}

pub fn coupling_forward(layer: &CouplingLayer, z: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = Matrix::from_vec(1, z.len(), z.to_vec())?;
    let (out, ld, _) = layer.forward_batch(&m)?;
    Ok((out.into_vec(), ld[0]))
}

pub fn coupling_inverse(layer: &CouplingLayer, y: &[f64]) -> Result<Vec<f64>> {
    let m = Matrix::from_vec(1, y.len(), y.to_vec())?;
    Ok(layer.inverse_batch(&m)?.into_vec())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseDistribution {
    #[default]
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    pub dim: usize,
    pub base: BaseDistribution,
    pub layers: Vec<CouplingLayer>,
}

/// Per-layer caches of a batch forward pass.
#[derive(Clone, Debug)]
pub struct FlowCache {
    layers: Vec<CouplingCache>,
}

/// Parameter gradients of one coupling layer.
#[derive(Clone, Debug)]
pub struct CouplingGrads {
    pub s_net: Gradients,
    pub t_net: Gradients,
}

fn at_layer(i: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("coupling layer {i}: {context}"),
        },
        other => other,
    }
}

impl FlowModel {
    pub fn new(layers: Vec<CouplingLayer>) -> Result<Self> {
        let dim = match layers.first() {
            Some(l) => l.dim(),
            None => return Err(Error::invalid("flow needs at least one coupling layer")),
        };
        if let Some(l) = layers.iter().find(|l| l.dim() != dim) {
            return Err(Error::invalid(format!(
                "coupling layers disagree on dimension: {dim} vs {}",
                l.dim()
            )));
        }
        Ok(FlowModel {
            dim,
            base: BaseDistribution::StandardNormal,
            layers,
        })
    }

    pub fn forward_batch(&self, z: &Matrix) -> Result<(Matrix, Vec<f64>, FlowCache)> {
        let mut h = z.clone();
        let mut total = vec![0.0; z.rows()];
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, ld, cache) = layer.forward_batch(&h).map_err(at_layer(i))?;
            total.iter_mut().zip(&ld).for_each(|(t, l)| *t += l);
            caches.push(cache);
            h = out;
        }
        Ok((h, total, FlowCache { layers: caches }))
    }

    pub fn inverse_batch(&self, u: &Matrix) -> Result<Matrix> {
        let mut h = u.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            h = layer.inverse_batch(&h).map_err(at_layer(i))?;
        }
        Ok(h)
    }

    /// Backpropagates `du` and the per-row log-det cotangent through all layers.
    pub fn backward(&self, cache: &FlowCache, du: &Matrix, dlogdet: &[f64]) -> Result<(Matrix, Vec<CouplingGrads>)> {
        let mut delta = du.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let (dx, s_net, t_net) = layer.backward(c, &delta, dlogdet)?;
            grads.push(CouplingGrads { s_net, t_net });
            delta = dx;
        }
        grads.reverse();
        Ok((delta, grads))
    }

    pub fn inverse(&self, u: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, u.len(), u.to_vec())?;
        Ok(self.inverse_batch(&m)?.into_vec())
    }

    /// Parameter slices in a fixed order: per layer, s-net then t-net.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| l.s_net.tensors().into_iter().chain(l.t_net.tensors()))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.s_net.tensors_mut().into_iter().chain(l.t_net.tensors_mut()))
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.tensors().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::invalid(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }
}

pub fn flatten_grads(grads: &[CouplingGrads]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.s_net.flatten().into_iter().chain(g.t_net.flatten()))
        .collect()
}

pub fn flow_forward(model: &FlowModel, z: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = Matrix::from_vec(1, z.len(), z.to_vec())?;
    let (u, ld, _) = model.forward_batch(&m)?;
    Ok((u.into_vec(), ld[0]))
}

/// `½‖u‖² + (d/2)·ln 2π − logdet`: the negative log-density of the input
/// under the flow with a standard-normal base.
pub fn anomaly_score(u: &[f64], total_logdet: f64, dim: usize) -> f64 {
    let sq: f64 = u.iter().map(|v| v * v).sum();
    0.5 * sq + 0.5 * dim as f64 * (2.0 * PI).ln() - total_logdet
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    /// Row position in the scored batch.
    pub index: usize,
    pub score: f64,
    pub logdet: f64,
    /// False when the raw score was non-finite and got replaced.
    pub valid: bool,
}

/// Replaces non-finite scores with the largest finite score of the batch.
/// Returns the cleaned scores and a validity flag per entry.
pub fn replace_non_finite(raw: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot score an empty batch"));
    }
    let max = raw
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::non_finite("every anomaly score in the batch"));
    }
    let valid: Vec<bool> = raw.iter().map(|v| v.is_finite()).collect();
    let cleaned = raw.iter().map(|&v| if v.is_finite() { v } else { max }).collect();
    Ok((cleaned, valid))
}

/// Scores every row of `latents`. Rows whose forward pass fails numerically
/// count as non-finite and are replaced by the batch maximum.
pub fn score_batch(model: &FlowModel, latents: &Matrix) -> Result<Vec<ScoreResult>> {
    if latents.rows() == 0 {
        return Err(Error::invalid("cannot score an empty batch"));
    }
    if latents.cols() != model.dim {
        return Err(Error::Shape {
            op: "score_batch",
            left: latents.shape(),
            right: (latents.rows(), model.dim),
        });
    }
    let (raw, logdets) = match model.forward_batch(latents) {
        Ok((u, ld, _)) => {
            let raw = u
                .iter_rows()
                .zip(&ld)
                .map(|(row, &l)| anomaly_score(row, l, model.dim))
                .collect::<Vec<_>>();
            (raw, ld)
        }
        // fall back to row-by-row so one bad row doesn't poison the batch
        Err(Error::NonFinite { .. }) => {
            let mut raw = Vec::with_capacity(latents.rows());
            let mut lds = Vec::with_capacity(latents.rows());
            for row in latents.iter_rows() {
                match flow_forward(model, row) {
                    Ok((u, l)) => {
                        raw.push(anomaly_score(&u, l, model.dim));
                        lds.push(l);
                    }
                    Err(Error::NonFinite { .. }) => {
                        raw.push(f64::NAN);
                        lds.push(f64::NAN);
                    }
                    Err(e) => return Err(e),
                }
            }
            (raw, lds)
        }
        Err(e) => return Err(e),
    };
    let (scores, valid) = replace_non_finite(&raw)?;
    Ok(scores
        .into_iter()
        .zip(valid)
        .zip(logdets)
        .enumerate()
        .map(|(index, ((score, valid), logdet))| ScoreResult {
            index,
            score,
            logdet,
            valid,
        })
        .collect())
}

/// Training objective: batch mean of `½‖u‖² − logdet`.
pub fn flow_loss(u: &Matrix, logdet: &[f64]) -> Result<f64> {
    if u.rows() != logdet.len() {
        return Err(Error::Shape {
            op: "flow_loss",
            left: u.shape(),
            right: (logdet.len(), u.cols()),
        });
    }
    if u.rows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let total: f64 = u
        .iter_rows()
        .zip(logdet)
        .map(|(row, l)| 0.5 * row.iter().map(|v| v * v).sum::<f64>() - l)
        .sum();
    let loss = total / u.rows() as f64;
    if !loss.is_finite() {
        return Err(Error::non_finite("flow loss"));
    }
    Ok(loss)
}

/// Loss of the batch `z` and its parameter gradients.
pub fn flow_loss_and_grads(model: &FlowModel, z: &Matrix) -> Result<(f64, Vec<CouplingGrads>)> {
    let (u, ld, cache) = model.forward_batch(z)?;
    let loss = flow_loss(&u, &ld)?;
    let n = z.rows() as f64;
    let du = u.map(|v| v / n);
    let dld = vec![-1.0 / n; z.rows()];
    let (_, grads) = model.backward(&cache, &du, &dld)?;
    Ok((loss, grads))
}
