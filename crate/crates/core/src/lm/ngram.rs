use std::collections::HashMap;

use super::{check_ids, CausalLM, Capabilities, LossCurve, TrainConfig, TrainableLM};
use crate::error::{Error, Result};
use crate::seqformat::MultimodalSequence;
use crate::vocab::TokenId;

/// Add-k smoothed n-gram model.
///
/// `P(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k·|V|)`, where `ctx` is the
/// last `order - 1` tokens (fewer near the start of a sequence).
#[derive(Debug, Clone)]
pub struct NGramLM {
    order: usize,
    add_k: f64,
    vocab_size: usize,
    counts: HashMap<Vec<TokenId>, HashMap<TokenId, u64>>,
    totals: HashMap<Vec<TokenId>, u64>,
}

impl NGramLM {
    pub fn new(order: usize, add_k: f64, vocab_size: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(add_k > 0.0) || !add_k.is_finite() {
            return Err(Error::invalid("add-k constant must be positive"));
        }
        Ok(Self {
            order,
            add_k,
            vocab_size,
            counts: HashMap::new(),
            totals: HashMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn context<'a>(&self, prefix: &'a [TokenId]) -> &'a [TokenId] {
        &prefix[prefix.len().saturating_sub(self.order - 1)..]
    }

    /// Accumulates counts for every scored position of `ids`.
    pub fn observe(&mut self, ids: &[TokenId]) {
        for i in 1..ids.len() {
            let ctx = self.context(&ids[..i]).to_vec();
            *self.totals.entry(ctx.clone()).or_default() += 1;
            *self.counts.entry(ctx).or_default().entry(ids[i]).or_default() += 1;
        }
    }

    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|m| m.get(&next))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_count(&self, context: &[TokenId]) -> u64 {
        self.totals.get(context).copied().unwrap_or(0)
    }

    pub fn prob(&self, prefix: &[TokenId], next: TokenId) -> f64 {
        let ctx = self.context(prefix);
        (self.count(ctx, next) as f64 + self.add_k)
            / (self.context_count(ctx) as f64 + self.add_k * self.vocab_size as f64)
    }
}

impl CausalLM for NGramLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_token_logprobs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        check_ids(prefix, self.vocab_size)?;
        Ok((0..self.vocab_size as TokenId)
            .map(|w| self.prob(prefix, w).ln())
            .collect())
    }

    fn token_logprobs(&self, ids: &[TokenId]) -> Result<Vec<f64>> {
        check_ids(ids, self.vocab_size)?;
        Ok((0..ids.len())
            .map(|i| if i == 0 { 0.0 } else { self.prob(&ids[..i], ids[i]).ln() })
            .collect())
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            trainable: true,
            differentiable: false,
        }
    }
}

impl TrainableLM for NGramLM {
    /// Counting is exact, so training is a single pass; the curve holds the
    /// resulting mean training NLL.
    fn fit(&mut self, data: &[MultimodalSequence], _cfg: &TrainConfig) -> Result<LossCurve> {
        for s in data {
            check_ids(&s.ids, self.vocab_size)?;
            self.observe(&s.ids);
        }
        let mut nll = 0.0;
        let mut n = 0usize;
        for s in data {
            let lp = self.token_logprobs(&s.ids)?;
            nll -= lp.iter().sum::<f64>();
            n += s.ids.len() - 1;
        }
        Ok(LossCurve {
            losses: vec![nll / n.max(1) as f64],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::train_lm;
    use crate::seqformat::{build_sequence, SequenceFormat};
    use crate::vocab::build_vocabulary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bigram_matches_hand_count() {
        let v = build_vocabulary(["a b", "a c"], 2).unwrap();
        let seqs: Vec<_> = ["a b", "a c"]
            .iter()
            .map(|s| build_sequence(&v, SequenceFormat::TextOnly, Some(&v.tokenize_text(s)), None).unwrap())
            .collect();
        let k = 0.1;
        let mut lm = NGramLM::new(2, k, v.size()).unwrap();
        train_lm(&mut lm, &seqs, &TrainConfig::default()).unwrap();
        let (a, b) = (v.text_id("a").unwrap(), v.text_id("b").unwrap());
        let expected = (1.0 + k) / (2.0 + k * v.size() as f64);
        assert_eq!(lm.prob(&[a], b), expected);
        let lp = lm.next_token_logprobs(&[a]).unwrap();
        assert_eq!(lp[b as usize], expected.ln());
    }

    #[test]
    fn deterministic_successor_is_learned() {
        let v = build_vocabulary(["a b x y"], 2).unwrap();
        let seqs: Vec<_> = ["a b", "x a b", "a b y", "y a b a b"]
            .iter()
            .map(|s| build_sequence(&v, SequenceFormat::TextOnly, Some(&v.tokenize_text(s)), None).unwrap())
            .collect();
        let mut lm = NGramLM::new(2, 0.01, v.size()).unwrap();
        train_lm(&mut lm, &seqs, &TrainConfig::default()).unwrap();
        assert!(lm.prob(&[v.text_id("a").unwrap()], v.text_id("b").unwrap()) > 0.9);
    }

    #[test]
    fn distributions_normalize_at_random_prefixes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut lm = NGramLM::new(3, 0.3, 20).unwrap();
        for _ in 0..50 {
            let ids: Vec<TokenId> = (0..rng.random_range(2..12)).map(|_| rng.random_range(0..20)).collect();
            lm.observe(&ids);
        }
        for _ in 0..100 {
            let prefix: Vec<TokenId> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..20)).collect();
            let total: f64 = lm.next_token_logprobs(&prefix).unwrap().iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(NGramLM::new(0, 1.0, 4).is_err());
        assert!(NGramLM::new(2, 0.0, 4).is_err());
    }
}
