//! Next-token cross-entropy training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_grad_norm, Adam, LrSchedule};
use super::{CausalLM, DifferentiableLM, TinyTransformerLM};
use crate::error::{Error, Result};
use crate::parallel::{try_map_indexed, Execution};
use crate::seqformat::{MultimodalSequence, SequenceFormat};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: usize,
    /// Per-step multiplicative learning-rate decay after warmup.
    pub decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            warmup_steps: 100,
            decay: 0.999,
            batch_size: 16,
            max_steps: 1000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::invalid("decay must be in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_adam > 0.0) {
            return Err(Error::invalid("bad Adam moments"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.learning_rate,
            warmup_steps: self.warmup_steps,
            decay: self.decay,
        }
    }

    pub fn optimizer(&self, n_params: usize) -> Adam {
        Adam::new(n_params, self.beta1, self.beta2, self.eps_adam)
    }
}

/// Mean training loss per optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn first(&self) -> Option<f64> {
        self.losses.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

pub trait TrainableLM: CausalLM {
    fn fit(&mut self, data: &[MultimodalSequence], cfg: &TrainConfig) -> Result<LossCurve>;
}

impl TrainableLM for TinyTransformerLM {
    fn fit(&mut self, data: &[MultimodalSequence], cfg: &TrainConfig) -> Result<LossCurve> {
        train_differentiable(self, data, cfg, Execution::default())
    }
}

/// Minimizes mean next-token cross-entropy over `sequences`.
pub fn train_lm<M: TrainableLM + ?Sized>(
    lm: &mut M,
    sequences: &[MultimodalSequence],
    cfg: &TrainConfig,
) -> Result<LossCurve> {
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !lm.capabilities().trainable {
        return Err(Error::Unsupported("training"));
    }
    cfg.validate()?;
    lm.fit(sequences, cfg)
}

/// Continues training on speech-only sequences.
pub fn continue_train<M: TrainableLM + ?Sized>(
    lm: &mut M,
    speech_only: &[MultimodalSequence],
    cfg: &TrainConfig,
) -> Result<LossCurve> {
    if let Some(s) = speech_only.iter().find(|s| s.format != SequenceFormat::SpeechOnly) {
        return Err(Error::invalid(format!(
            "adaptation data must be speech-only, found {:?}",
            s.format
        )));
    }
    train_lm(lm, speech_only, cfg)
}

/// Adam training loop shared by every differentiable model.
///
/// Batches are drawn from a seeded per-epoch shuffle. Per-sequence gradients
/// are computed independently and summed in batch order, so the result does
/// not depend on the execution strategy.
pub fn train_differentiable<M: DifferentiableLM + ?Sized>(
    lm: &mut M,
    data: &[MultimodalSequence],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<LossCurve> {
    let n_params = lm.num_params();
    let schedule = cfg.schedule();
    let mut opt = cfg.optimizer(n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut curve = LossCurve::default();

    for step in 0..cfg.max_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }

        let model: &M = lm;
        let parts = try_map_indexed(exec, &batch, |_, seq| {
            let mut g = vec![0.0; n_params];
            let w = vec![-1.0; seq.ids.len()];
            let lp = model.accumulate_grad(&seq.ids, &w, &mut g)?;
            Ok::<_, Error>((g, lp.iter().sum::<f64>(), seq.ids.len() - 1))
        })?;
        let mut grad = vec![0.0; n_params];
        let mut loglik = 0.0;
        let mut count = 0usize;
        for (g, lp, c) in &parts {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
            loglik += lp;
            count += c;
        }
        let loss = -loglik / count.max(1) as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "loss", step });
        }
        let scale = 1.0 / count.max(1) as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        clip_grad_norm(&mut grad, cfg.max_grad_norm);
        opt.step(lm.params_mut(), &grad, schedule.at(step));
        if lm.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { what: "parameter", step });
        }
        curve.losses.push(loss);
    }
    Ok(curve)
}
