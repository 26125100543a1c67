//! Causal language models over the joint vocabulary.
//!
//! [`CausalLM`] is the scoring surface used by rescoring. Models that expose
//! parameters and reverse-mode gradients also implement [`DifferentiableLM`],
//! which is what cross-entropy training and MWER fine-tuning need.

mod checkpoint;
mod ngram;
pub(crate) mod optim;
mod train;
mod transformer;

use crate::error::{Error, Result};
use crate::seqformat::MultimodalSequence;
use crate::vocab::TokenId;

pub use checkpoint::{load_transformer, save_transformer, CHECKPOINT_MAGIC};
pub use ngram::NGramLM;
pub use optim::{Adam, LrSchedule};
pub use train::{continue_train, train_differentiable, train_lm, LossCurve, TrainConfig, TrainableLM};
pub use transformer::{TinyTransformerLM, TransformerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub trainable: bool,
    pub differentiable: bool,
}

pub trait CausalLM: Sync {
    fn vocab_size(&self) -> usize;

    /// Log-probabilities of every vocabulary id following `prefix`.
    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;

    /// `out[i] = log P(ids[i] | ids[..i])` for `i >= 1`; `out[0]` is `0.0`
    /// because the first token is context only.
    fn token_logprobs(&self, ids: &[TokenId]) -> Result<Vec<f64>>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn as_differentiable(&self) -> Option<&dyn DifferentiableLM> {
        None
    }
}

pub trait DifferentiableLM: CausalLM {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Adds `d/dθ Σ_i weights[i] · log P(ids[i] | ids[..i])` into `grad` and
    /// returns the per-token log-probabilities (same layout as
    /// [`CausalLM::token_logprobs`]). `weights[0]` is ignored.
    fn accumulate_grad(&self, ids: &[TokenId], weights: &[f64], grad: &mut [f64]) -> Result<Vec<f64>>;
}

/// Every id is equally likely. Useful as a closed-form reference.
#[derive(Debug, Clone, Copy)]
pub struct UniformLM {
    pub vocab_size: usize,
}

impl CausalLM for UniformLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, _prefix: &[TokenId]) -> Result<Vec<f64>> {
        Ok(vec![-(self.vocab_size as f64).ln(); self.vocab_size])
    }

    fn token_logprobs(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        check_ids(ids, self.vocab_size)?;
        let lp = -(self.vocab_size as f64).ln();
        Ok((0..ids.len()).map(|i| if i == 0 { 0.0 } else { lp }).collect())
    }
}

pub(crate) fn check_ids(ids: &[TokenId], vocab_size: usize) -> Result<()> {
    match ids.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(Error::UnknownToken(id)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    /// Indexed by position; `per_token[0]` is `0.0` (unscored).
    pub per_token: Vec<f64>,
    pub total: f64,
}

impl SequenceScore {
    fn from_per_token(per_token: Vec<f64>) -> Self {
        let total = per_token.iter().sum();
        Self { per_token, total }
    }

    /// Sum over positions `>= start`.
    pub fn suffix(&self, start: usize) -> Result<f64> {
        if start == 0 || start >= self.per_token.len() {
            return Err(Error::invalid(format!(
                "start {start} outside 1..{}",
                self.per_token.len()
            )));
        }
        Ok(self.per_token[start..].iter().sum())
    }

    /// Sum over positions `1..end`.
    pub fn prefix(&self, end: usize) -> f64 {
        self.per_token[..end.min(self.per_token.len())].iter().sum()
    }
}

/// Natural-log likelihood of a sequence, token by token.
pub fn sequence_logprob<M: CausalLM + ?Sized>(lm: &M, seq: &MultimodalSequence) -> Result<SequenceScore> {
    if seq.len() < 2 {
        return Err(Error::invalid("a scored sequence needs at least two tokens"));
    }
    Ok(SequenceScore::from_per_token(lm.token_logprobs(&seq.ids)?))
}

/// Log-likelihood of positions `start..` given everything before them.
pub fn conditional_logprob<M: CausalLM + ?Sized>(lm: &M, seq: &MultimodalSequence, start: usize) -> Result<f64> {
    if start == 0 || start >= seq.len() {
        return Err(Error::invalid(format!("start {start} outside 1..{}", seq.len())));
    }
    sequence_logprob(lm, seq)?.suffix(start)
}

/// `exp(-mean log-prob)` over every scored position.
pub fn perplexity<M: CausalLM + ?Sized>(lm: &M, sequences: &[MultimodalSequence]) -> Result<f64> {
    if sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scores = crate::parallel::try_map_indexed(crate::parallel::Execution::default(), sequences, |_, s| {
        sequence_logprob(lm, s)
    })?;
    let mut total = 0.0;
    let mut count = 0usize;
    for s in &scores {
        total += s.total;
        count += s.per_token.len() - 1;
    }
    Ok((-total / count as f64).exp())
}
