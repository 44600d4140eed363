use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{flatten_grads, flow_loss_and_grads, make_mask, CouplingLayer, FlowModel, MaskPattern, DEFAULT_SCALE_CLAMP};
use crate::error::{Error, Result};
use crate::numerics::{epoch_batches, init_params_with_rng, shuffled_batches, AdamState, InitScheme, Matrix, PlateauScheduler};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// One coupling layer per entry.
    pub masks: Vec<MaskPattern>,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub scale_clamp: Option<f64>,
    /// Fixed mini-batch size; `None` trains full-batch up to 4096 rows.
    pub batch_size: Option<usize>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            masks: vec![MaskPattern::Alternating, MaskPattern::AlternatingShifted, MaskPattern::Half],
            hidden: 128,
            epochs: 1000,
            lr: 1e-4,
            weight_decay: 0.01,
            plateau_factor: 0.8,
            plateau_patience: 30,
            min_lr: 1e-7,
            scale_clamp: Some(DEFAULT_SCALE_CLAMP),
            batch_size: None,
        }
    }
}

impl FlowConfig {
    pub fn n_layers(&self) -> usize {
        self.masks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.masks.is_empty() {
            return Err(Error::Config("flow needs at least one coupling layer".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("flow hidden width must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "flow lr {} / weight decay {} out of range",
                self.lr, self.weight_decay
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("flow batch size must be >= 1".into()));
        }
        Ok(())
    }

    /// Untrained model: Xavier-initialized s/t nets whose last layers are
    /// zero, so the flow starts as the identity.
    pub fn init_model(&self, dim: usize, rng: &mut ChaCha8Rng) -> Result<FlowModel> {
        self.validate()?;
        let mut layers = Vec::with_capacity(self.masks.len());
        for &pattern in &self.masks {
            let mask = make_mask(dim, pattern)?;
            let p = mask.iter().filter(|&&m| m).count();
            let dims = [p, self.hidden, self.hidden, dim - p];
            let mut s = init_params_with_rng(rng, &dims, InitScheme::XavierUniform)?;
            let mut t = init_params_with_rng(rng, &dims, InitScheme::XavierUniform)?;
            s.zero_output_layer();
            t.zero_output_layer();
            layers.push(CouplingLayer::new(mask, s, t, self.scale_clamp)?.with_pattern(pattern));
        }
        FlowModel::new(layers)
    }
}

#[derive(Clone, Debug)]
pub struct FlowTrainOutput {
    pub model: FlowModel,
    /// Mean training loss of every epoch (before that epoch's updates).
    pub losses: Vec<f64>,
    pub final_lr: f64,
    pub seed: u64,
}

/// Fits the flow to `latents` (normal training data only) by minimizing the
/// mean negative log-likelihood with AdamW and a plateau scheduler.
pub fn flow_train(latents: &Matrix, config: &FlowConfig, seed: u64) -> Result<FlowTrainOutput> {
    if latents.rows() == 0 {
        return Err(Error::invalid("flow training data is empty"));
    }
    if !latents.is_finite() {
        return Err(Error::non_finite("flow training latents"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = config.init_model(latents.cols(), &mut rng)?;
    let mut opt = AdamState::adamw(config.lr, config.weight_decay);
    let mut sched = PlateauScheduler::new(config.plateau_factor, config.plateau_patience, config.min_lr)?;
    let mut losses = Vec::with_capacity(config.epochs);
    let n = latents.rows();
    let diverged = |epoch: usize, e: Error| Error::Divergence {
        stage: "flow",
        epoch,
        reason: e.to_string(),
    };
    for epoch in 1..=config.epochs {
        let batches = match config.batch_size {
            Some(b) => shuffled_batches(n, b, &mut rng),
            None => epoch_batches(n, &mut rng),
        };
        let mut total = 0.0;
        for idx in batches {
            let sub;
            let batch = if idx.len() == n && config.batch_size.is_none() {
                latents
            } else {
                sub = latents.select_rows(&idx);
                &sub
            };
            let (loss, grads) = flow_loss_and_grads(&model, batch).map_err(|e| diverged(epoch, e))?;
            total += loss * idx.len() as f64;
            let flat = flatten_grads(&grads);
            let mut params = model.tensors_mut();
            let mut off = 0;
            let grad_slices: Vec<&[f64]> = params
                .iter()
                .map(|p| {
                    let g = &flat[off..off + p.len()];
                    off += p.len();
                    g
                })
                .collect();
            opt.step(&mut params, &grad_slices).map_err(|e| diverged(epoch, e))?;
        }
        let epoch_loss = total / n as f64;
        opt.lr = sched.step(opt.lr, epoch_loss);
        if epoch % 100 == 0 {
            log::debug!("flow epoch {epoch} loss {epoch_loss:.6} lr {:.3e}", opt.lr);
        }
        losses.push(epoch_loss);
    }
    Ok(FlowTrainOutput {
        model,
        losses,
        final_lr: opt.lr,
        seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub model: FlowModel,
    pub config: FlowConfig,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub final_lr: f64,
}

impl FlowTrainOutput {
    pub fn checkpoint(&self, config: &FlowConfig) -> FlowCheckpoint {
        FlowCheckpoint {
            model: self.model.clone(),
            config: config.clone(),
            seed: self.seed,
            final_loss: self.losses.last().copied(),
            final_lr: self.final_lr,
        }
    }
}

impl FlowCheckpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: FlowCheckpoint = serde_json::from_str(text)?;
        // re-validate structure that serde cannot check
        FlowModel::new(
            ck.model
                .layers
                .iter()
                .map(|l| CouplingLayer::new(l.mask.clone(), l.s_net.clone(), l.t_net.clone(), l.clamp))
                .collect::<Result<_>>()?,
        )?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}
