//! Minimum word error rate fine-tuning over n-best lists.
//!
//! The loss is the expected word edit distance under the n-best posterior
//! `P_i = softmax(s)_i`, with `s_i` the interpolated rescoring score. Its
//! gradient w.r.t. the scores is `P_i (ε_i − Σ_j P_j ε_j)`, which is pushed
//! through the LM log-likelihood term only; the first-pass score and λ are
//! constants.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::{CausalLM, DifferentiableLM, TrainConfig};
use crate::metrics::{selection_wer, word_edit_distance, ErrorCounts};
use crate::nbest::NBestEntry;
use crate::parallel::{try_map_indexed, Execution};
use crate::rescore::{corpus_lm_scores, scoring_sequence, top1_picks, Lambda, ScoringMode, ScoringSequence};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq)]
pub struct MWERConfig {
    /// Frozen interpolation weight inside `s_i`.
    pub lambda: Lambda,
    pub mode: ScoringMode,
    pub include_shared_audio_prefix: bool,
    /// Replace `ε_i` by `ε_i − mean(ε)` in the gradient path.
    pub baseline_subtraction: bool,
    /// Optimizer settings; `batch_size` counts n-best entries per update.
    pub train: TrainConfig,
    /// Validation WER is measured every this many updates and after the
    /// last one.
    pub checkpoint_every: usize,
}

impl Default for MWERConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Weight(0.5),
            mode: ScoringMode::SpeechFirst,
            include_shared_audio_prefix: true,
            baseline_subtraction: false,
            train: TrainConfig {
                learning_rate: 3e-4,
                warmup_steps: 20,
                decay: 1.0,
                batch_size: 1,
                max_steps: 600,
                ..TrainConfig::default()
            },
            checkpoint_every: 50,
        }
    }
}

impl MWERConfig {
    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        self.train.validate()?;
        if self.checkpoint_every == 0 {
            return Err(Error::invalid("checkpoint_every must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorVector {
    pub probs: Vec<f64>,
}

/// Softmax over `scores` with max subtraction.
pub fn posterior(scores: &[f64]) -> Result<PosteriorVector> {
    if scores.is_empty() {
        return Err(Error::invalid("posterior of an empty score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { what: "score", step: 0 });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(PosteriorVector {
        probs: exps.into_iter().map(|e| e / z).collect(),
    })
}

/// Expected risk and its gradient with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedRisk {
    pub loss: f64,
    pub posterior: PosteriorVector,
    pub score_grad: Vec<f64>,
}

pub fn expected_risk(scores: &[f64], errors: &[f64], baseline_subtraction: bool) -> Result<ExpectedRisk> {
    if scores.len() != errors.len() {
        return Err(Error::DimMismatch {
            expected: scores.len(),
            got: errors.len(),
        });
    }
    let posterior = posterior(scores)?;
    let p = &posterior.probs;
    let loss: f64 = p.iter().zip(errors).map(|(p, e)| p * e).sum();
    let shift = if baseline_subtraction {
        errors.iter().sum::<f64>() / errors.len() as f64
    } else {
        0.0
    };
    let centered: Vec<f64> = errors.iter().map(|e| e - shift).collect();
    let mean: f64 = p.iter().zip(&centered).map(|(p, e)| p * e).sum();
    let score_grad = p.iter().zip(&centered).map(|(p, e)| p * (e - mean)).collect();
    Ok(ExpectedRisk {
        loss,
        posterior,
        score_grad,
    })
}

/// Word edit distance of every hypothesis against the reference.
pub fn hypothesis_errors(entry: &NBestEntry) -> Result<Vec<f64>> {
    let reference = entry.reference()?;
    Ok(entry
        .hypotheses
        .iter()
        .map(|h| word_edit_distance(&h.text, reference).distance as f64)
        .collect())
}

struct EntryScores {
    sequences: Vec<ScoringSequence>,
    scores: Vec<f64>,
}

fn entry_scores<M: CausalLM + ?Sized>(
    lm: &M,
    entry: &NBestEntry,
    cfg: &MWERConfig,
    vocab: &Vocabulary,
) -> Result<EntryScores> {
    let mut sequences = Vec::with_capacity(entry.hypotheses.len());
    let mut scores = Vec::with_capacity(entry.hypotheses.len());
    for (i, h) in entry.hypotheses.iter().enumerate() {
        let s = scoring_sequence(vocab, entry, i, cfg.mode, cfg.include_shared_audio_prefix)?;
        let lm_logprob = if cfg.lambda.uses_lm() {
            s.lm_logprob(&lm.token_logprobs(&s.sequence.ids)?)
        } else {
            0.0
        };
        scores.push(cfg.lambda.combine(lm_logprob, h.am_logprob));
        sequences.push(s);
    }
    Ok(EntryScores { sequences, scores })
}

pub fn mwer_loss<M: CausalLM + ?Sized>(lm: &M, entry: &NBestEntry, cfg: &MWERConfig, vocab: &Vocabulary) -> Result<f64> {
    cfg.lambda.validate()?;
    let errors = hypothesis_errors(entry)?;
    let s = entry_scores(lm, entry, cfg, vocab)?;
    Ok(expected_risk(&s.scores, &errors, cfg.baseline_subtraction)?.loss)
}

/// Adds `∂L/∂θ` for one entry into `grad` and returns the loss terms.
pub fn mwer_grad<M: CausalLM + ?Sized>(
    lm: &M,
    entry: &NBestEntry,
    cfg: &MWERConfig,
    vocab: &Vocabulary,
    grad: &mut [f64],
    exec: Execution,
) -> Result<ExpectedRisk> {
    let model = lm.as_differentiable().ok_or(Error::Unsupported("MWER gradient"))?;
    if grad.len() != model.num_params() {
        return Err(Error::DimMismatch {
            expected: model.num_params(),
            got: grad.len(),
        });
    }
    cfg.lambda.validate()?;
    let errors = hypothesis_errors(entry)?;
    let s = entry_scores(model, entry, cfg, vocab)?;
    let risk = expected_risk(&s.scores, &errors, cfg.baseline_subtraction)?;
    if !cfg.lambda.uses_lm() {
        return Ok(risk);
    }
    let parts = try_map_indexed(exec, &s.sequences, |i, seq| {
        let d = risk.score_grad[i];
        if d == 0.0 {
            return Ok(None);
        }
        let weights: Vec<f64> = seq.mask().into_iter().map(|m| m * d).collect();
        let mut g = vec![0.0; grad.len()];
        model.accumulate_grad(&seq.sequence.ids, &weights, &mut g)?;
        Ok::<_, Error>(Some(g))
    })?;
    for g in parts.into_iter().flatten() {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok(risk)
}

/// One row of the fine-tuning log. `loss` is the mean training loss of the
/// update that produced `step`; `val_wer` is present at checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct MwerLogRow {
    pub step: usize,
    pub loss: Option<f64>,
    pub val_wer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwerRun {
    pub log: Vec<MwerLogRow>,
    pub initial_val: ErrorCounts,
    pub selected_step: usize,
    pub selected_val: ErrorCounts,
}

impl MwerRun {
    pub fn initial_val_wer(&self) -> f64 {
        self.initial_val.wer()
    }

    pub fn selected_val_wer(&self) -> f64 {
        self.selected_val.wer()
    }

    pub fn log_tsv(&self) -> String {
        let mut out = String::from("step\tloss\tval_wer\n");
        for r in &self.log {
            let loss = r.loss.map(|l| format!("{l:.6}")).unwrap_or_default();
            let wer = r.val_wer.map(|w| format!("{w:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{}\t{loss}\t{wer}", r.step);
        }
        out
    }
}

fn validation_counts<M: CausalLM + ?Sized>(
    lm: &M,
    validation: &[NBestEntry],
    cfg: &MWERConfig,
    vocab: &Vocabulary,
    exec: Execution,
) -> Result<ErrorCounts> {
    let scores = corpus_lm_scores(lm, validation, cfg.mode, cfg.include_shared_audio_prefix, vocab, exec)?;
    let picks = top1_picks(&scores, validation, cfg.lambda);
    Ok(selection_wer(validation, &picks)?.totals)
}

/// Fine-tunes `lm` and leaves it at the checkpoint with the lowest
/// validation WER; the initial model is checkpoint 0 and the earliest
/// checkpoint wins ties.
pub fn train_mwer<M: DifferentiableLM + ?Sized>(
    lm: &mut M,
    train: &[NBestEntry],
    validation: &[NBestEntry],
    cfg: &MWERConfig,
    vocab: &Vocabulary,
    exec: Execution,
) -> Result<MwerRun> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for e in train.iter().chain(validation) {
        e.reference()?;
    }
    let n_params = lm.num_params();
    let schedule = cfg.train.schedule();
    let mut opt = cfg.train.optimizer(n_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();

    let initial_val = validation_counts(&*lm, validation, cfg, vocab, exec)?;
    let mut log = vec![MwerLogRow {
        step: 0,
        loss: None,
        val_wer: Some(initial_val.wer()),
    }];
    let mut best = (0usize, initial_val, lm.params().to_vec());

    for step in 0..cfg.train.max_steps {
        let mut grad = vec![0.0; n_params];
        let mut loss = 0.0;
        let batch = cfg.train.batch_size.min(train.len());
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let entry = &train[order[cursor]];
            cursor += 1;
            loss += mwer_grad(&*lm, entry, cfg, vocab, &mut grad, exec)?.loss;
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "MWER loss", step });
        }
        let scale = 1.0 / batch as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        crate::lm::optim::clip_grad_norm(&mut grad, cfg.train.max_grad_norm);
        opt.step(lm.params_mut(), &grad, schedule.at(step));
        if lm.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { what: "parameter", step });
        }

        let done = step + 1;
        let mut row = MwerLogRow {
            step: done,
            loss: Some(loss),
            val_wer: None,
        };
        if done % cfg.checkpoint_every == 0 || done == cfg.train.max_steps {
            let counts = validation_counts(&*lm, validation, cfg, vocab, exec)?;
            row.val_wer = Some(counts.wer());
            if counts.errors() < best.1.errors() {
                best = (done, counts, lm.params().to_vec());
            }
        }
        log.push(row);
    }

    lm.params_mut().copy_from_slice(&best.2);
    Ok(MwerRun {
        log,
        initial_val,
        selected_step: best.0,
        selected_val: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{TinyTransformerLM, TransformerConfig, UniformLM};
    use crate::nbest::Hypothesis;
    use crate::vocab::{build_vocabulary, AudioTokenStream};
    use proptest::prelude::*;

    #[test]
    fn posterior_examples() {
        assert_eq!(posterior(&[1.0; 4]).unwrap().probs, vec![0.25; 4]);
        let p = posterior(&[0.0, 2f64.ln()]).unwrap().probs;
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15 && (p[1] - 2.0 / 3.0).abs() < 1e-15);
        let q = posterior(&[1000.0, 1000.0 + 2f64.ln()]).unwrap().probs;
        assert!((q[0] - p[0]).abs() < 1e-12);
        assert!(posterior(&[]).is_err());
        assert!(posterior(&[0.0, f64::NAN]).is_err());
        assert!(posterior(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn loss_examples() {
        let r = expected_risk(&[0.0, 2f64.ln()], &[0.0, 3.0], false).unwrap();
        assert!((r.loss - 2.0).abs() < 1e-12);
        let r = expected_risk(&[-3.0, 7.0, 0.1], &[2.0; 3], false).unwrap();
        assert!((r.loss - 2.0).abs() < 1e-12);
        assert!(r.score_grad.iter().all(|&g| g == 0.0));
        let r = expected_risk(&[-5.0], &[4.0], false).unwrap();
        assert_eq!(r.loss, 4.0);
        assert_eq!(r.score_grad, vec![0.0]);
    }

    #[test]
    fn score_gradient_matches_finite_differences() {
        let s = [0.3, -1.2, 0.8, 0.0];
        let e = [1.0, 0.0, 3.0, 2.0];
        let r = expected_risk(&s, &e, false).unwrap();
        let h = 1e-6;
        for i in 0..s.len() {
            let mut up = s;
            let mut dn = s;
            up[i] += h;
            dn[i] -= h;
            let fd = (expected_risk(&up, &e, false).unwrap().loss - expected_risk(&dn, &e, false).unwrap().loss) / (2.0 * h);
            assert!((fd - r.score_grad[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn baseline_subtraction_keeps_loss_and_gradient(
            s in prop::collection::vec(-10.0f64..10.0, 1..10),
            e in prop::collection::vec(0u8..8, 10),
        ) {
            let e: Vec<f64> = e[..s.len()].iter().map(|&x| x as f64).collect();
            let a = expected_risk(&s, &e, false).unwrap();
            let b = expected_risk(&s, &e, true).unwrap();
            prop_assert_eq!(a.loss, b.loss);
            for (x, y) in a.score_grad.iter().zip(&b.score_grad) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn loss_is_bounded_by_errors(
            s in prop::collection::vec(-1e4f64..1e4, 1..10),
            e in prop::collection::vec(0u8..8, 10),
        ) {
            let e: Vec<f64> = e[..s.len()].iter().map(|&x| x as f64).collect();
            let r = expected_risk(&s, &e, false).unwrap();
            let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.loss >= lo - 1e-12 && r.loss <= hi + 1e-12);
            prop_assert!((r.posterior.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    fn toy() -> (Vocabulary, TinyTransformerLM, NBestEntry) {
        let v = build_vocabulary(["a b c d e"], 6).unwrap();
        let cfg = TransformerConfig {
            vocab_size: v.size(),
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            max_len: 24,
        };
        let lm = TinyTransformerLM::new(cfg, 4).unwrap();
        let entry = NBestEntry {
            utt_id: "u".into(),
            audio: Some(AudioTokenStream::new("u", vec![1, 5, 2, 0])),
            reference: Some("a b c".into()),
            hypotheses: vec![
                Hypothesis::new("a b d", -1.0),
                Hypothesis::new("a b c", -1.3),
                Hypothesis::new("e b", -2.0),
                Hypothesis::new("a c", -1.1),
            ],
        };
        (v, lm, entry)
    }

    fn mcfg(mode: ScoringMode) -> MWERConfig {
        MWERConfig {
            lambda: Lambda::Weight(0.4),
            mode,
            ..MWERConfig::default()
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (v, lm, e) = toy();
        for mode in [ScoringMode::TextOnly, ScoringMode::SpeechFirst, ScoringMode::TextFirst] {
            let cfg = mcfg(mode);
            let mut grad = vec![0.0; lm.num_params()];
            mwer_grad(&lm, &e, &cfg, &v, &mut grad, Execution::Sequential).unwrap();
            let h = 1e-3;
            let step = lm.num_params() / 60;
            for p in (0..lm.num_params()).step_by(step) {
                let at = |d: f64| {
                    let mut m = lm.clone();
                    m.params_mut()[p] += d;
                    mwer_loss(&m, &e, &cfg, &v).unwrap()
                };
                // Fourth-order central stencil.
                let fd = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                let denom = fd.abs().max(grad[p].abs()).max(1e-7);
                assert!((fd - grad[p]).abs() / denom < 1e-4, "{mode:?} param {p}: {fd} vs {}", grad[p]);
            }
        }
    }

    #[test]
    fn audio_prefix_toggle_leaves_everything_unchanged() {
        let (v, lm, e) = toy();
        let with = mcfg(ScoringMode::SpeechFirst);
        let without = MWERConfig {
            include_shared_audio_prefix: false,
            ..with.clone()
        };
        let mut ga = vec![0.0; lm.num_params()];
        let mut gb = vec![0.0; lm.num_params()];
        let a = mwer_grad(&lm, &e, &with, &v, &mut ga, Execution::Sequential).unwrap();
        let b = mwer_grad(&lm, &e, &without, &v, &mut gb, Execution::Sequential).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, y) in a.posterior.probs.iter().zip(&b.posterior.probs) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in ga.iter().zip(&gb) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_differentiable_model_is_rejected() {
        let (v, _, e) = toy();
        let lm = UniformLM { vocab_size: v.size() };
        let mut g = vec![];
        assert!(matches!(
            mwer_grad(&lm, &e, &mcfg(ScoringMode::TextOnly), &v, &mut g, Execution::Sequential),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn missing_reference_is_an_error() {
        let (v, lm, mut e) = toy();
        e.reference = None;
        assert!(matches!(mwer_loss(&lm, &e, &mcfg(ScoringMode::TextOnly), &v), Err(Error::MissingReference(_))));
    }

    #[test]
    fn small_step_raises_posterior_of_the_correct_hypothesis() {
        let (v, mut lm, e) = toy();
        let cfg = mcfg(ScoringMode::SpeechFirst);
        let before = entry_scores(&lm, &e, &cfg, &v).unwrap().scores;
        assert!(before[1] < before.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let p0 = posterior(&before).unwrap().probs[1];
        let mut grad = vec![0.0; lm.num_params()];
        mwer_grad(&lm, &e, &cfg, &v, &mut grad, Execution::Sequential).unwrap();
        for (p, g) in lm.params_mut().iter_mut().zip(&grad) {
            *p -= 1e-2 * g;
        }
        let p1 = posterior(&entry_scores(&lm, &e, &cfg, &v).unwrap().scores).unwrap().probs[1];
        assert!(p1 > p0, "{p0} -> {p1}");
    }

    #[test]
    fn zero_steps_returns_the_input_model() {
        let (v, mut lm, e) = toy();
        let orig = lm.clone();
        let cfg = MWERConfig {
            train: TrainConfig {
                max_steps: 0,
                ..mcfg(ScoringMode::TextOnly).train
            },
            ..mcfg(ScoringMode::TextOnly)
        };
        let run = train_mwer(&mut lm, std::slice::from_ref(&e), std::slice::from_ref(&e), &cfg, &v, Execution::Sequential).unwrap();
        assert_eq!(lm, orig);
        assert_eq!(run.selected_step, 0);
        assert_eq!(run.log.len(), 1);
    }

    #[test]
    fn training_never_selects_a_worse_checkpoint_and_is_deterministic() {
        let (v, lm0, e) = toy();
        let mut other = e.clone();
        other.utt_id = "w".into();
        other.reference = Some("e b".into());
        let train = vec![e.clone(), other.clone()];
        let cfg = MWERConfig {
            train: TrainConfig {
                learning_rate: 1e-2,
                warmup_steps: 0,
                max_steps: 12,
                ..mcfg(ScoringMode::SpeechFirst).train
            },
            checkpoint_every: 4,
            ..mcfg(ScoringMode::SpeechFirst)
        };
        let mut a = lm0.clone();
        let ra = train_mwer(&mut a, &train, &train, &cfg, &v, Execution::Sequential).unwrap();
        assert!(ra.selected_val.errors() <= ra.initial_val.errors());
        assert_eq!(ra.log.len(), 13);
        let mut b = lm0.clone();
        let rb = train_mwer(&mut b, &train, &train, &cfg, &v, Execution::Parallel).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(ra.log_tsv(), rb.log_tsv());
        assert!(ra.log_tsv().starts_with("step\tloss\tval_wer\n0\t\t"));
    }
}
