//! N-best rescoring: `s_i = log P_LM(·) + λ · log P_AM(a | y_i)`.
//!
//! The LM term depends on the scoring mode:
//!
//! * `TextOnly`: likelihood of `<text-bos> y <eos>`.
//! * `SpeechFirst`: `<speech-bos> x <text-bos> y <eos>`; the text segment and
//!   eos are scored conditioned on the audio, and the audio-prefix
//!   likelihood is added only when `include_shared_audio_prefix` is set. That
//!   prefix is identical for every hypothesis of an utterance, so it never
//!   changes the ranking.
//! * `TextFirst`: `<text-bos> y <speech-bos> x <eos>`, every position scored.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lm::{sequence_logprob, CausalLM};
use crate::metrics::{selection_wer, ErrorCounts};
use crate::nbest::{Hypothesis, NBestEntry};
use crate::parallel::{try_map_indexed, Execution};
use crate::seqformat::{build_sequence, Modality, MultimodalSequence, SequenceFormat};
use crate::vocab::Vocabulary;

pub use crate::nbest::DEFAULT_MAX_HYPOTHESES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoringMode {
    TextOnly,
    SpeechFirst,
    TextFirst,
}

impl ScoringMode {
    pub fn format(self) -> SequenceFormat {
        match self {
            ScoringMode::TextOnly => SequenceFormat::TextOnly,
            ScoringMode::SpeechFirst => SequenceFormat::SpeechFirst,
            ScoringMode::TextFirst => SequenceFormat::TextFirst,
        }
    }

    pub fn needs_audio(self) -> bool {
        self != ScoringMode::TextOnly
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringMode::TextOnly => "text",
            ScoringMode::SpeechFirst => "sf",
            ScoringMode::TextFirst => "tf",
        })
    }
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ScoringMode::TextOnly),
            "sf" => Ok(ScoringMode::SpeechFirst),
            "tf" => Ok(ScoringMode::TextFirst),
            _ => Err(Error::invalid(format!("unknown mode {s:?} (text|sf|tf)"))),
        }
    }
}

/// Interpolation weight on the first-pass score. `AmOnly` ranks purely by
/// the first-pass score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Weight(f64),
    AmOnly,
}

impl Lambda {
    pub fn validate(self) -> Result<Self> {
        match self {
            Lambda::Weight(w) if !(w >= 0.0) || !w.is_finite() => {
                Err(Error::invalid(format!("lambda must be finite and >= 0, got {w}")))
            }
            _ => Ok(self),
        }
    }

    pub fn combine(self, lm_logprob: f64, am_logprob: f64) -> f64 {
        match self {
            Lambda::Weight(w) => lm_logprob + w * am_logprob,
            Lambda::AmOnly => am_logprob,
        }
    }

    /// Whether the LM term contributes to the combined score.
    pub fn uses_lm(self) -> bool {
        matches!(self, Lambda::Weight(_))
    }

    /// Tie-break order for tuning: smaller weights first, `AmOnly` last.
    fn order_key(self) -> f64 {
        match self {
            Lambda::Weight(w) => w,
            Lambda::AmOnly => f64::INFINITY,
        }
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Weight(w) => write!(f, "{w}"),
            Lambda::AmOnly => f.write_str("am_only"),
        }
    }
}

impl FromStr for Lambda {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "am_only" {
            return Ok(Lambda::AmOnly);
        }
        s.parse::<f64>()
            .map_err(|_| Error::invalid(format!("bad lambda {s:?}")))
            .and_then(|w| Lambda::Weight(w).validate())
    }
}

/// `{0, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1, 1.5, 2, AM_ONLY}`
pub fn default_lambda_grid() -> Vec<Lambda> {
    [0.0, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5, 2.0]
        .into_iter()
        .map(Lambda::Weight)
        .chain([Lambda::AmOnly])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoreConfig {
    pub mode: ScoringMode,
    pub lambda: Lambda,
    pub include_shared_audio_prefix: bool,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        Self {
            mode: ScoringMode::TextOnly,
            lambda: Lambda::Weight(1.0),
            include_shared_audio_prefix: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    pub lm_logprob: f64,
    pub am_logprob: f64,
    pub combined: f64,
    pub original_index: usize,
}

/// Scoring sequence for one hypothesis plus the position from which its LM
/// term is summed.
#[derive(Debug, Clone)]
pub struct ScoringSequence {
    pub sequence: MultimodalSequence,
    pub first_scored: usize,
}

impl ScoringSequence {
    /// 0/1 weight per position marking the positions that make up the LM
    /// term.
    pub fn mask(&self) -> Vec<f64> {
        (0..self.sequence.len())
            .map(|i| if i >= self.first_scored && i > 0 { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn lm_logprob(&self, per_token: &[f64]) -> f64 {
        if self.first_scored <= 1 {
            per_token.iter().sum()
        } else {
            per_token[self.first_scored..].iter().sum()
        }
    }
}

pub fn scoring_sequence(
    vocab: &Vocabulary,
    entry: &NBestEntry,
    hyp_index: usize,
    mode: ScoringMode,
    include_shared_audio_prefix: bool,
) -> Result<ScoringSequence> {
    let hyp = entry.hypotheses.get(hyp_index).ok_or_else(|| {
        Error::invalid(format!(
            "hypothesis {hyp_index} out of range for {}",
            entry.utt_id
        ))
    })?;
    let text = vocab.tokenize_text(&hyp.text);
    let speech = if mode.needs_audio() {
        let audio = entry
            .audio
            .as_ref()
            .filter(|a| !a.units.is_empty())
            .ok_or_else(|| Error::MissingAudio(entry.utt_id.clone()))?;
        Some(audio.to_ids(vocab)?)
    } else {
        None
    };
    let sequence = build_sequence(vocab, mode.format(), Some(&text), speech.as_deref())?;
    let first_scored = match mode {
        ScoringMode::SpeechFirst if !include_shared_audio_prefix => {
            sequence.segment_bounds(Modality::Text)?.0
        }
        _ => 1,
    };
    Ok(ScoringSequence {
        sequence,
        first_scored,
    })
}

pub fn score_hypothesis<M: CausalLM + ?Sized>(
    lm: &M,
    entry: &NBestEntry,
    hyp_index: usize,
    cfg: &RescoreConfig,
    vocab: &Vocabulary,
) -> Result<ScoredHypothesis> {
    let lambda = cfg.lambda.validate()?;
    let s = scoring_sequence(vocab, entry, hyp_index, cfg.mode, cfg.include_shared_audio_prefix)?;
    let score = sequence_logprob(lm, &s.sequence)?;
    let hyp = &entry.hypotheses[hyp_index];
    let lm_logprob = s.lm_logprob(&score.per_token);
    Ok(ScoredHypothesis {
        hypothesis: hyp.clone(),
        lm_logprob,
        am_logprob: hyp.am_logprob,
        combined: lambda.combine(lm_logprob, hyp.am_logprob),
        original_index: hyp_index,
    })
}

/// LM terms of every hypothesis of `entry`, in n-best order.
pub fn entry_lm_scores<M: CausalLM + ?Sized>(
    lm: &M,
    entry: &NBestEntry,
    mode: ScoringMode,
    include_shared_audio_prefix: bool,
    vocab: &Vocabulary,
) -> Result<Vec<f64>> {
    (0..entry.hypotheses.len())
        .map(|i| {
            let s = scoring_sequence(vocab, entry, i, mode, include_shared_audio_prefix)?;
            let score = sequence_logprob(lm, &s.sequence)?;
            Ok(s.lm_logprob(&score.per_token))
        })
        .collect()
}

/// Sorts by combined score, descending; exact ties keep n-best order.
pub fn rank(mut scored: Vec<ScoredHypothesis>) -> Vec<ScoredHypothesis> {
    scored.sort_by(|a, b| b.combined.total_cmp(&a.combined));
    scored
}

/// Combines precomputed LM terms with first-pass scores and ranks them.
pub fn rank_with_lm_scores(entry: &NBestEntry, lm_scores: &[f64], lambda: Lambda) -> Vec<ScoredHypothesis> {
    rank(
        entry
            .hypotheses
            .iter()
            .zip(lm_scores)
            .enumerate()
            .map(|(i, (h, &lm))| ScoredHypothesis {
                hypothesis: h.clone(),
                lm_logprob: lm,
                am_logprob: h.am_logprob,
                combined: lambda.combine(lm, h.am_logprob),
                original_index: i,
            })
            .collect(),
    )
}

pub fn rerank<M: CausalLM + ?Sized>(
    lm: &M,
    entry: &NBestEntry,
    cfg: &RescoreConfig,
    vocab: &Vocabulary,
) -> Result<Vec<ScoredHypothesis>> {
    cfg.lambda.validate()?;
    let lm_scores = entry_lm_scores(lm, entry, cfg.mode, cfg.include_shared_audio_prefix, vocab)?;
    Ok(rank_with_lm_scores(entry, &lm_scores, cfg.lambda))
}

/// LM terms for a whole corpus, one vector per entry, computed in parallel
/// over entries.
pub fn corpus_lm_scores<M: CausalLM + ?Sized>(
    lm: &M,
    corpus: &[NBestEntry],
    mode: ScoringMode,
    include_shared_audio_prefix: bool,
    vocab: &Vocabulary,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    try_map_indexed(exec, corpus, |_, e| {
        entry_lm_scores(lm, e, mode, include_shared_audio_prefix, vocab)
    })
}

pub fn rerank_corpus<M: CausalLM + ?Sized>(
    lm: &M,
    corpus: &[NBestEntry],
    cfg: &RescoreConfig,
    vocab: &Vocabulary,
    exec: Execution,
) -> Result<Vec<Vec<ScoredHypothesis>>> {
    cfg.lambda.validate()?;
    let scores = corpus_lm_scores(lm, corpus, cfg.mode, cfg.include_shared_audio_prefix, vocab, exec)?;
    Ok(corpus
        .iter()
        .zip(&scores)
        .map(|(e, s)| rank_with_lm_scores(e, s, cfg.lambda))
        .collect())
}

/// Index of the top-ranked hypothesis of each entry.
pub fn top1_picks(lm_scores: &[Vec<f64>], corpus: &[NBestEntry], lambda: Lambda) -> Vec<usize> {
    corpus
        .iter()
        .zip(lm_scores)
        .map(|(e, s)| rank_with_lm_scores(e, s, lambda)[0].original_index)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTuning {
    pub best: Lambda,
    pub wer: f64,
    /// `(λ, pooled error counts)` for every grid point, in grid order.
    pub table: Vec<(Lambda, ErrorCounts)>,
}

/// Grid search for the interpolation weight minimizing pooled WER on
/// `validation`. Ties go to the smaller weight, `AmOnly` last.
pub fn tune_lambda<M: CausalLM + ?Sized>(
    lm: &M,
    validation: &[NBestEntry],
    cfg_base: &RescoreConfig,
    grid: &[Lambda],
    vocab: &Vocabulary,
) -> Result<LambdaTuning> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    for l in grid {
        l.validate()?;
    }
    if let Some(e) = validation.iter().find(|e| e.reference.is_none()) {
        return Err(Error::MissingReference(e.utt_id.clone()));
    }
    let scores = corpus_lm_scores(
        lm,
        validation,
        cfg_base.mode,
        cfg_base.include_shared_audio_prefix,
        vocab,
        Execution::default(),
    )?;
    tune_lambda_from_scores(validation, &scores, grid)
}

pub fn tune_lambda_from_scores(
    validation: &[NBestEntry],
    lm_scores: &[Vec<f64>],
    grid: &[Lambda],
) -> Result<LambdaTuning> {
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &l in grid {
        let picks = top1_picks(lm_scores, validation, l);
        table.push((l, selection_wer(validation, &picks)?.totals));
    }
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].order_key().total_cmp(&grid[b].order_key()));
    let mut best = order[0];
    for &i in &order[1..] {
        if table[i].1.errors() < table[best].1.errors() {
            best = i;
        }
    }
    let counts = table[best].1;
    Ok(LambdaTuning {
        best: grid[best],
        wer: counts.wer(),
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{NGramLM, UniformLM};
    use crate::vocab::{build_vocabulary, AudioTokenStream};
    use proptest::prelude::*;

    fn toy() -> (Vocabulary, NBestEntry) {
        let v = build_vocabulary(["the cat sat on a mat hat"], 4).unwrap();
        let entry = NBestEntry {
            utt_id: "u1".into(),
            audio: Some(AudioTokenStream::new("u1", vec![0, 2, 1])),
            reference: Some("the cat sat".into()),
            hypotheses: vec![
                Hypothesis::new("the hat sat", -0.5),
                Hypothesis::new("the cat sat", -0.7),
                Hypothesis::new("a cat", -2.0),
            ],
        };
        (v, entry)
    }

    fn trained_bigram(v: &Vocabulary) -> NGramLM {
        let mut lm = NGramLM::new(2, 0.5, v.size()).unwrap();
        let text = ["the cat sat on the mat", "the cat sat", "a hat"];
        let audio = [vec![0u32, 2, 1], vec![0, 2], vec![3, 3]];
        for (t, a) in text.iter().zip(&audio) {
            let y = v.tokenize_text(t);
            let x: Vec<u32> = a.iter().map(|&u| v.speech_id(u).unwrap()).collect();
            for f in SequenceFormat::ALL {
                lm.observe(&build_sequence(v, f, Some(&y), Some(&x)).unwrap().ids);
            }
        }
        lm
    }

    /// Product of add-k bigram conditionals over `ids[from..]`, by hand.
    fn bigram_oracle(lm: &NGramLM, v: &Vocabulary, ids: &[u32], from: usize) -> f64 {
        let k = 0.5;
        (from.max(1)..ids.len())
            .map(|i| {
                let c = lm.count(&[ids[i - 1]], ids[i]) as f64;
                let n = lm.context_count(&[ids[i - 1]]) as f64;
                ((c + k) / (n + k * v.size() as f64)).ln()
            })
            .sum()
    }

    #[test]
    fn lambda_zero_text_only_is_pure_lm() {
        let (v, e) = toy();
        let lm = trained_bigram(&v);
        let cfg = RescoreConfig {
            mode: ScoringMode::TextOnly,
            lambda: Lambda::Weight(0.0),
            include_shared_audio_prefix: true,
        };
        let s = score_hypothesis(&lm, &e, 1, &cfg, &v).unwrap();
        let seq = build_sequence(&v, SequenceFormat::TextOnly, Some(&v.tokenize_text("the cat sat")), None).unwrap();
        assert_eq!(s.combined, sequence_logprob(&lm, &seq).unwrap().total);
        assert_eq!(s.combined, s.lm_logprob);
    }

    #[test]
    fn uniform_speech_first_counts_scored_positions() {
        let (v, e) = toy();
        let lm = UniformLM { vocab_size: v.size() };
        let cfg = RescoreConfig {
            mode: ScoringMode::SpeechFirst,
            lambda: Lambda::Weight(0.0),
            include_shared_audio_prefix: true,
        };
        let s = score_hypothesis(&lm, &e, 0, &cfg, &v).unwrap();
        let (l, t) = (3.0, 3.0);
        let expected = (l + t + 2.0) * (1.0 / v.size() as f64).ln();
        assert!((s.lm_logprob - expected).abs() < 1e-12);
    }

    #[test]
    fn bigram_scores_match_hand_products_in_every_mode() {
        let (v, e) = toy();
        let lm = trained_bigram(&v);
        let lambda = 0.3;
        let x: Vec<u32> = e.audio.as_ref().unwrap().to_ids(&v).unwrap();
        for (i, h) in e.hypotheses.iter().enumerate() {
            let y = v.tokenize_text(&h.text);
            let text_only = [vec![0], y.clone(), vec![2]].concat();
            let sf = [vec![1], x.clone(), vec![0], y.clone(), vec![2]].concat();
            let tf = [vec![0], y.clone(), vec![1], x.clone(), vec![2]].concat();
            let cases = [
                (ScoringMode::TextOnly, true, bigram_oracle(&lm, &v, &text_only, 1)),
                (ScoringMode::SpeechFirst, true, bigram_oracle(&lm, &v, &sf, 1)),
                (ScoringMode::SpeechFirst, false, bigram_oracle(&lm, &v, &sf, x.len() + 1)),
                (ScoringMode::TextFirst, true, bigram_oracle(&lm, &v, &tf, 1)),
            ];
            for (mode, prefix, lm_oracle) in cases {
                let cfg = RescoreConfig {
                    mode,
                    lambda: Lambda::Weight(lambda),
                    include_shared_audio_prefix: prefix,
                };
                let s = score_hypothesis(&lm, &e, i, &cfg, &v).unwrap();
                let want = lm_oracle + lambda * h.am_logprob;
                assert!((s.combined - want).abs() < 1e-12, "{mode:?} {prefix}: {} vs {want}", s.combined);
            }
        }
    }

    #[test]
    fn rerank_matches_oracle_sort() {
        let (v, e) = toy();
        let lm = trained_bigram(&v);
        for mode in [ScoringMode::TextOnly, ScoringMode::SpeechFirst, ScoringMode::TextFirst] {
            let cfg = RescoreConfig {
                mode,
                lambda: Lambda::Weight(0.5),
                include_shared_audio_prefix: true,
            };
            let ranked = rerank(&lm, &e, &cfg, &v).unwrap();
            let mut oracle: Vec<(f64, usize)> = (0..3)
                .map(|i| (score_hypothesis(&lm, &e, i, &cfg, &v).unwrap().combined, i))
                .collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let got: Vec<usize> = ranked.iter().map(|s| s.original_index).collect();
            let want: Vec<usize> = oracle.iter().map(|o| o.1).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn equal_scores_keep_input_order() {
        let (v, mut e) = toy();
        for h in &mut e.hypotheses {
            h.text = "the cat".into();
            h.am_logprob = -1.0;
        }
        let lm = trained_bigram(&v);
        let ranked = rerank(&lm, &e, &RescoreConfig::default(), &v).unwrap();
        assert_eq!(ranked.iter().map(|s| s.original_index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn huge_lambda_sorts_by_first_pass() {
        let (v, e) = toy();
        let lm = trained_bigram(&v);
        let cfg = RescoreConfig {
            lambda: Lambda::Weight(1e9),
            ..RescoreConfig::default()
        };
        let ranked = rerank(&lm, &e, &cfg, &v).unwrap();
        assert_eq!(ranked.iter().map(|s| s.original_index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn multimodal_modes_require_audio() {
        let (v, mut e) = toy();
        let lm = UniformLM { vocab_size: v.size() };
        let cfg = RescoreConfig {
            mode: ScoringMode::SpeechFirst,
            ..RescoreConfig::default()
        };
        e.audio.as_mut().unwrap().units.clear();
        assert!(matches!(rerank(&lm, &e, &cfg, &v), Err(Error::MissingAudio(_))));
        e.audio = None;
        assert!(matches!(rerank(&lm, &e, &cfg, &v), Err(Error::MissingAudio(_))));
        let text = RescoreConfig::default();
        assert!(rerank(&lm, &e, &text, &v).is_ok());
    }

    #[test]
    fn lambda_parsing_and_validation() {
        assert_eq!("am_only".parse::<Lambda>().unwrap(), Lambda::AmOnly);
        assert_eq!("0.5".parse::<Lambda>().unwrap(), Lambda::Weight(0.5));
        assert!("-1".parse::<Lambda>().is_err());
        assert!("nan".parse::<Lambda>().is_err());
        assert_eq!("sf".parse::<ScoringMode>().unwrap(), ScoringMode::SpeechFirst);
        assert!("x".parse::<ScoringMode>().is_err());
    }

    fn tuning_corpus() -> (Vocabulary, Vec<NBestEntry>) {
        let v = build_vocabulary(["a b c d"], 2).unwrap();
        let e = |id: &str, r: &str, hyps: &[(&str, f64)]| NBestEntry {
            utt_id: id.into(),
            audio: None,
            reference: Some(r.into()),
            hypotheses: hyps.iter().map(|(t, s)| Hypothesis::new(*t, *s)).collect(),
        };
        (v, vec![
            e("u1", "a b", &[("a b", -1.0), ("c d", 0.0)]),
            e("u2", "c d", &[("a b", 0.0), ("c d", -1.0)]),
        ])
    }

    #[test]
    fn tuning_with_only_zero_returns_zero() {
        let (v, corpus) = tuning_corpus();
        let lm = UniformLM { vocab_size: v.size() };
        let t = tune_lambda(&lm, &corpus, &RescoreConfig::default(), &[Lambda::Weight(0.0)], &v).unwrap();
        assert_eq!(t.best, Lambda::Weight(0.0));
    }

    #[test]
    fn tuning_ties_go_to_the_smallest_lambda() {
        let (v, corpus) = tuning_corpus();
        let lm = UniformLM { vocab_size: v.size() };
        // Uniform LM: every weight > 0 ranks purely by AM, so all of them
        // tie; λ = 0 ties every hypothesis and keeps index 0.
        let grid = [Lambda::AmOnly, Lambda::Weight(2.0), Lambda::Weight(0.5)];
        let t = tune_lambda(&lm, &corpus, &RescoreConfig::default(), &grid, &v).unwrap();
        assert!(t.table.iter().all(|(_, c)| c.errors() == 4));
        assert_eq!(t.best, Lambda::Weight(0.5));
        let with_zero = [Lambda::AmOnly, Lambda::Weight(0.0)];
        let t = tune_lambda(&lm, &corpus, &RescoreConfig::default(), &with_zero, &v).unwrap();
        assert_eq!(t.best, Lambda::Weight(0.0));
        assert_eq!(t.wer, 0.5);
    }

    #[test]
    fn tuning_finds_an_interior_optimum() {
        // Bigram LM prefers "a b" everywhere by 2 * ln(3) - ish. Constructed
        // so λ = 0 (LM only) and AM_ONLY each get one utterance wrong, while
        // λ = 0.5 gets both right.
        let v = build_vocabulary(["a b c d"], 2).unwrap();
        let mut lm = NGramLM::new(2, 1.0, v.size()).unwrap();
        for _ in 0..3 {
            lm.observe(&build_sequence(&v, SequenceFormat::TextOnly, Some(&v.tokenize_text("a b")), None).unwrap().ids);
        }
        let seq = |t: &str| build_sequence(&v, SequenceFormat::TextOnly, Some(&v.tokenize_text(t)), None).unwrap();
        let lm_ab = sequence_logprob(&lm, &seq("a b")).unwrap().total;
        let lm_cd = sequence_logprob(&lm, &seq("c d")).unwrap().total;
        let gap = lm_ab - lm_cd;
        assert!(gap > 0.0);
        let e = |id: &str, r: &str, hyps: &[(&str, f64)]| NBestEntry {
            utt_id: id.into(),
            audio: None,
            reference: Some(r.into()),
            hypotheses: hyps.iter().map(|(t, s)| Hypothesis::new(*t, *s)).collect(),
        };
        // u1: reference "c d" has AM margin 4·gap; AM wins for λ > 1/4.
        // u2: reference "a b" has AM deficit gap; LM wins for λ < 1.
        let corpus = vec![
            e("u1", "c d", &[("a b", -4.0 * gap), ("c d", 0.0)]),
            e("u2", "a b", &[("c d", 0.0), ("a b", -gap)]),
        ];
        let t = tune_lambda(&lm, &corpus, &RescoreConfig::default(), &default_lambda_grid(), &v).unwrap();
        let errs = |l: Lambda| t.table.iter().find(|(x, _)| *x == l).unwrap().1.errors();
        assert!(errs(Lambda::Weight(0.5)) < errs(Lambda::Weight(0.0)));
        assert!(errs(Lambda::Weight(0.5)) < errs(Lambda::AmOnly));
        // Smallest grid value inside (1/4, 1) is 0.35.
        assert_eq!(t.best, Lambda::Weight(0.35));
        assert_eq!(t.wer, 0.0);
        let just_half = tune_lambda(&lm, &corpus, &RescoreConfig::default(), &[Lambda::Weight(0.0), Lambda::Weight(0.5), Lambda::AmOnly], &v).unwrap();
        assert_eq!(just_half.best, Lambda::Weight(0.5));
    }

    #[test]
    fn tuning_requires_references() {
        let (v, mut corpus) = tuning_corpus();
        corpus[1].reference = None;
        let lm = UniformLM { vocab_size: v.size() };
        assert!(matches!(
            tune_lambda(&lm, &corpus, &RescoreConfig::default(), &default_lambda_grid(), &v),
            Err(Error::MissingReference(_))
        ));
    }

    proptest! {
        #[test]
        fn ranking_is_a_permutation(scores in prop::collection::vec(-20.0f64..0.0, 1..12), lm in prop::collection::vec(-30.0f64..0.0, 12)) {
            let e = NBestEntry {
                utt_id: "u".into(),
                audio: None,
                reference: None,
                hypotheses: scores.iter().map(|&s| Hypothesis::new("x", s)).collect(),
            };
            let ranked = rank_with_lm_scores(&e, &lm[..scores.len()], Lambda::Weight(0.7));
            let mut idx: Vec<usize> = ranked.iter().map(|s| s.original_index).collect();
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..scores.len()).collect::<Vec<_>>());
            prop_assert!(ranked.windows(2).all(|w| w[0].combined >= w[1].combined));
        }
    }
}
