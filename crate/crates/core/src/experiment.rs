//! End-to-end synthetic rescoring experiment.
//!
//! Generates a corpus, trains a text-only LM and a speech-text LM, tunes λ
//! on validation for each scoring mode, evaluates on test, fine-tunes the
//! speech-text LM with MWER, and optionally compares speech-text models
//! trained with and without speech-only data from a second domain.

use std::fmt::Write as _;

use crate::data::{
    build_pretraining_sequences, generate_synthetic_corpus, speech_sequences, text_sequences, SynthConfig,
    SynthCorpus,
};
use crate::error::Result;
use crate::lm::{train_differentiable, CausalLM, LossCurve, TinyTransformerLM, TrainConfig, TransformerConfig};
use crate::metrics::{oracle_wer, selection_wer, ErrorCounts};
use crate::mwer::{train_mwer, MWERConfig, MwerRun};
use crate::nbest::NBestEntry;
use crate::parallel::Execution;
use crate::rescore::{
    corpus_lm_scores, default_lambda_grid, top1_picks, tune_lambda_from_scores, Lambda, ScoringMode,
};
use crate::vocab::Vocabulary;

/// Transformer dimensions; the vocabulary size comes from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl ModelShape {
    pub fn with_vocab(self, vocab_size: usize) -> TransformerConfig {
        TransformerConfig {
            vocab_size,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            max_len: self.max_len,
        }
    }
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ff: 256,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelShape,
    pub model_seed: u64,
    /// Speech-text LM pre-training.
    pub pretrain: TrainConfig,
    /// Text-only baseline LM training.
    pub text_train: TrainConfig,
    /// MWER settings; `lambda` is replaced by the tuned speech-first value.
    pub mwer: MWERConfig,
    pub lambda_grid: Vec<Lambda>,
    /// Run the second-domain comparison.
    pub cross_domain: bool,
    pub target_grammar_seed: u64,
    pub target_seed: u64,
    pub target_speech: usize,
    pub target_eval: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::seeded(0)
    }
}

impl ExperimentConfig {
    /// Default settings with every seed derived from `seed`.
    pub fn seeded(seed: u64) -> Self {
        Self {
            synth: SynthConfig {
                lexicon_seed: seed + 1,
                grammar_seed: seed + 2,
                seed: seed + 3,
                ..SynthConfig::default()
            },
            model: ModelShape::default(),
            model_seed: seed + 7,
            pretrain: TrainConfig {
                learning_rate: 3e-3,
                warmup_steps: 100,
                decay: 0.9995,
                batch_size: 16,
                max_steps: 1000,
                seed: seed + 11,
                ..TrainConfig::default()
            },
            text_train: TrainConfig {
                learning_rate: 3e-3,
                warmup_steps: 100,
                decay: 0.9995,
                batch_size: 16,
                max_steps: 800,
                seed: seed + 12,
                ..TrainConfig::default()
            },
            mwer: MWERConfig {
                train: TrainConfig {
                    seed,
                    ..MWERConfig::default().train
                },
                ..MWERConfig::default()
            },
            lambda_grid: default_lambda_grid(),
            cross_domain: true,
            target_grammar_seed: seed + 102,
            target_seed: seed + 103,
            target_speech: 4000,
            target_eval: 500,
        }
    }

    /// Key/value echo of every setting, in a fixed order.
    pub fn describe(&self) -> Vec<(String, String)> {
        let s = &self.synth;
        let m = &self.model;
        let mut rows: Vec<(String, String)> = vec![
            ("synth.n_train".into(), s.n_train.to_string()),
            ("synth.n_validation".into(), s.n_validation.to_string()),
            ("synth.n_test".into(), s.n_test.to_string()),
            ("synth.n_unpaired_text".into(), s.n_unpaired_text.to_string()),
            ("synth.n_unpaired_speech".into(), s.n_unpaired_speech.to_string()),
            (
                "synth.words_per_utterance".into(),
                format!("{}-{}", s.words_per_utterance.0, s.words_per_utterance.1),
            ),
            ("synth.lexicon_size".into(), s.lexicon_size.to_string()),
            ("synth.homophone_pairs".into(), s.homophone_pairs.to_string()),
            ("synth.n_speech_units".into(), s.n_speech_units.to_string()),
            ("synth.successors".into(), s.successors.to_string()),
            ("synth.n_best".into(), s.n_best.to_string()),
            ("synth.sub_rate".into(), s.sub_rate.to_string()),
            ("synth.ins_rate".into(), s.ins_rate.to_string()),
            ("synth.del_rate".into(), s.del_rate.to_string()),
            ("synth.homophone_fraction".into(), s.homophone_fraction.to_string()),
            ("synth.audio_noise".into(), s.audio_noise.to_string()),
            ("synth.am_score_noise".into(), s.am_score_noise.to_string()),
            (
                "synth.reference_in_nbest".into(),
                s.reference_in_nbest.map_or("natural".into(), |p| p.to_string()),
            ),
            ("synth.seeds".into(), format!("{}/{}/{}", s.lexicon_seed, s.grammar_seed, s.seed)),
            (
                "model".into(),
                format!("L{} H{} D{} F{} T{}", m.n_layers, m.n_heads, m.d_model, m.d_ff, m.max_len),
            ),
            ("model.seed".into(), self.model_seed.to_string()),
        ];
        for (name, t) in [("pretrain", &self.pretrain), ("text_train", &self.text_train), ("mwer", &self.mwer.train)] {
            rows.push((
                name.into(),
                format!(
                    "lr={} warmup={} decay={} batch={} steps={} seed={} clip={}",
                    t.learning_rate, t.warmup_steps, t.decay, t.batch_size, t.max_steps, t.seed, t.max_grad_norm
                ),
            ));
        }
        rows.push(("mwer.checkpoint_every".into(), self.mwer.checkpoint_every.to_string()));
        rows.push(("mwer.baseline_subtraction".into(), self.mwer.baseline_subtraction.to_string()));
        let grid: Vec<String> = self.lambda_grid.iter().map(Lambda::to_string).collect();
        rows.push(("lambda_grid".into(), grid.join(",")));
        rows.push(("cross_domain".into(), self.cross_domain.to_string()));
        if self.cross_domain {
            rows.push((
                "target".into(),
                format!(
                    "grammar_seed={} seed={} speech={} eval={}",
                    self.target_grammar_seed, self.target_seed, self.target_speech, self.target_eval
                ),
            ));
        }
        rows
    }
}

/// Tuned and evaluated rescoring configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub label: String,
    pub mode: ScoringMode,
    pub lambda: Lambda,
    pub val: ErrorCounts,
    pub test: ErrorCounts,
    /// Validation counts at every grid point.
    pub grid: Vec<(Lambda, ErrorCounts)>,
}

impl ModeResult {
    pub fn val_at(&self, lambda: Lambda) -> Option<ErrorCounts> {
        self.grid.iter().find(|(l, _)| *l == lambda).map(|(_, c)| *c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossDomainResult {
    pub first_pass_test: ErrorCounts,
    pub oracle_test: ErrorCounts,
    pub unadapted: ModeResult,
    pub adapted: ModeResult,
    pub adapted_loss: LossCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub first_pass_val: ErrorCounts,
    pub first_pass_test: ErrorCounts,
    pub oracle_val: ErrorCounts,
    pub oracle_test: ErrorCounts,
    pub homophone_share: f64,
    pub text_loss: LossCurve,
    pub pretrain_loss: LossCurve,
    pub text: ModeResult,
    pub speech_first: ModeResult,
    pub text_first: ModeResult,
    pub mwer: MwerRun,
    pub mwer_result: ModeResult,
    pub cross: Option<CrossDomainResult>,
}

impl ExperimentOutcome {
    /// Every evaluated configuration with its corpus-level oracle:
    /// `(label, top-1 counts, oracle counts)`.
    pub fn oracle_checks(&self) -> Vec<(String, ErrorCounts, ErrorCounts)> {
        let mut out = vec![
            ("first_pass/val".to_string(), self.first_pass_val, self.oracle_val),
            ("first_pass/test".to_string(), self.first_pass_test, self.oracle_test),
        ];
        for r in [&self.text, &self.speech_first, &self.text_first, &self.mwer_result] {
            out.push((format!("{}/test", r.label), r.test, self.oracle_test));
            for (l, c) in &r.grid {
                out.push((format!("{}/val@{l}", r.label), *c, self.oracle_val));
            }
        }
        if let Some(c) = &self.cross {
            for r in [&c.unadapted, &c.adapted] {
                out.push((format!("{}/test", r.label), r.test, c.oracle_test));
            }
        }
        out
    }

    pub fn to_tsv(&self, cfg: &ExperimentConfig) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# mmrescore {}", crate::VERSION);
        for (k, v) in cfg.describe() {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str("section\tsystem\tlambda\tval_wer\ttest_wer\ttest_errors\ttest_ref_words\n");
        let row = |out: &mut String, section: &str, system: &str, lambda: &str, val: ErrorCounts, test: ErrorCounts| {
            let _ = writeln!(
                out,
                "{section}\t{system}\t{lambda}\t{:.6}\t{:.6}\t{}\t{}",
                val.wer(),
                test.wer(),
                test.errors(),
                test.ref_words
            );
        };
        row(&mut out, "main", "first_pass", "-", self.first_pass_val, self.first_pass_test);
        row(&mut out, "main", "oracle", "-", self.oracle_val, self.oracle_test);
        for r in [&self.text, &self.speech_first, &self.text_first, &self.mwer_result] {
            row(&mut out, "main", &r.label, &r.lambda.to_string(), r.val, r.test);
        }
        if let Some(c) = &self.cross {
            let none = ErrorCounts::default();
            row(&mut out, "cross", "first_pass", "-", none, c.first_pass_test);
            row(&mut out, "cross", "oracle", "-", none, c.oracle_test);
            for r in [&c.unadapted, &c.adapted] {
                row(&mut out, "cross", &r.label, &r.lambda.to_string(), r.val, r.test);
            }
        }
        out.push_str("\nlambda_sweep\tsystem\tlambda\tval_wer\n");
        let mut sweep = vec![&self.text, &self.speech_first, &self.text_first];
        if let Some(c) = &self.cross {
            sweep.extend([&c.unadapted, &c.adapted]);
        }
        for r in sweep {
            for (l, c) in &r.grid {
                let _ = writeln!(out, "lambda_sweep\t{}\t{l}\t{:.6}", r.label, c.wer());
            }
        }
        out.push_str("\nmwer\tstep\tloss\tval_wer\n");
        for line in self.mwer.log_tsv().lines().skip(1) {
            let _ = writeln!(out, "mwer\t{line}");
        }
        let _ = writeln!(out, "\nsummary\tkey\tvalue");
        let loss = |c: &LossCurve| format!("{:.6}->{:.6}", c.first().unwrap_or(f64::NAN), c.last().unwrap_or(f64::NAN));
        let mut kv = vec![
            ("homophone_share", format!("{:.6}", self.homophone_share)),
            ("text_lm_loss", loss(&self.text_loss)),
            ("speech_text_lm_loss", loss(&self.pretrain_loss)),
            ("mwer_selected_step", self.mwer.selected_step.to_string()),
            ("mwer_initial_val_wer", format!("{:.6}", self.mwer.initial_val_wer())),
            ("mwer_selected_val_wer", format!("{:.6}", self.mwer.selected_val_wer())),
        ];
        if let Some(c) = &self.cross {
            kv.push(("adapted_lm_loss", loss(&c.adapted_loss)));
        }
        for (k, v) in kv {
            let _ = writeln!(out, "summary\t{k}\t{v}");
        }
        out
    }
}

fn first_pass(corpus: &[NBestEntry]) -> Result<ErrorCounts> {
    Ok(selection_wer(corpus, &vec![0; corpus.len()])?.totals)
}

/// Tunes λ on `validation`, then evaluates on `test`.
pub fn evaluate_mode<M: CausalLM + ?Sized>(
    label: &str,
    lm: &M,
    mode: ScoringMode,
    validation: &[NBestEntry],
    test: &[NBestEntry],
    grid: &[Lambda],
    vocab: &Vocabulary,
    exec: Execution,
) -> Result<ModeResult> {
    let val_scores = corpus_lm_scores(lm, validation, mode, true, vocab, exec)?;
    let tuning = tune_lambda_from_scores(validation, &val_scores, grid)?;
    let test_scores = corpus_lm_scores(lm, test, mode, true, vocab, exec)?;
    let picks = top1_picks(&test_scores, test, tuning.best);
    let test_counts = selection_wer(test, &picks)?.totals;
    let val = tuning
        .table
        .iter()
        .find(|(l, _)| *l == tuning.best)
        .map(|(_, c)| *c)
        .unwrap_or_default();
    Ok(ModeResult {
        label: label.to_string(),
        mode,
        lambda: tuning.best,
        val,
        test: test_counts,
        grid: tuning.table,
    })
}

fn train_model(
    shape: ModelShape,
    seed: u64,
    vocab: &Vocabulary,
    data: &[crate::seqformat::MultimodalSequence],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(TinyTransformerLM, LossCurve)> {
    let mut lm = TinyTransformerLM::new(shape.with_vocab(vocab.size()), seed)?;
    cfg.validate()?;
    let curve = train_differentiable(&mut lm, data, cfg, exec)?;
    Ok((lm, curve))
}

/// Corpus for the second domain: same lexicon and audio signatures, a
/// different grammar, no paired training data.
pub fn target_domain_config(cfg: &ExperimentConfig) -> SynthConfig {
    SynthConfig {
        n_train: 0,
        n_validation: cfg.target_eval,
        n_test: cfg.target_eval,
        n_unpaired_text: 0,
        n_unpaired_speech: cfg.target_speech,
        domain: format!("{}-target", cfg.synth.domain),
        grammar_seed: cfg.target_grammar_seed,
        seed: cfg.target_seed,
        ..cfg.synth.clone()
    }
}

/// Everything a finished run produces.
pub struct ExperimentRun {
    pub outcome: ExperimentOutcome,
    pub corpus: SynthCorpus,
    pub vocab: Vocabulary,
    pub text_lm: TinyTransformerLM,
    /// Speech-text LM before MWER.
    pub speech_text_lm: TinyTransformerLM,
    /// Selected MWER checkpoint.
    pub mwer_lm: TinyTransformerLM,
}

/// Runs the whole pipeline. `progress` receives one line per stage.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution, progress: &mut dyn FnMut(&str)) -> Result<ExperimentRun> {
    cfg.mwer.validate()?;
    progress("generating corpus");
    let corpus = generate_synthetic_corpus(&cfg.synth)?;
    let vocab = corpus.vocabulary()?;
    let grid = &cfg.lambda_grid;

    progress("training text-only LM");
    let text_data = text_sequences(
        corpus
            .train
            .iter()
            .filter_map(|e| e.reference.as_deref())
            .chain(corpus.unpaired_text.iter().map(String::as_str)),
        &vocab,
    )?;
    let (text_lm, text_loss) = train_model(cfg.model, cfg.model_seed, &vocab, &text_data, &cfg.text_train, exec)?;

    progress("training speech-text LM");
    let pretrain_data =
        build_pretraining_sequences(&corpus.train, &corpus.unpaired_text, &corpus.unpaired_speech, &vocab)?;
    let (mm_lm, pretrain_loss) =
        train_model(cfg.model, cfg.model_seed, &vocab, &pretrain_data, &cfg.pretrain, exec)?;

    progress("rescoring");
    let (val, test) = (&corpus.validation, &corpus.test);
    let text = evaluate_mode("text_lm", &text_lm, ScoringMode::TextOnly, val, test, grid, &vocab, exec)?;
    let speech_first = evaluate_mode("speech_text_sf", &mm_lm, ScoringMode::SpeechFirst, val, test, grid, &vocab, exec)?;
    let text_first = evaluate_mode("speech_text_tf", &mm_lm, ScoringMode::TextFirst, val, test, grid, &vocab, exec)?;

    progress("MWER fine-tuning");
    let mwer_cfg = MWERConfig {
        lambda: speech_first.lambda,
        mode: ScoringMode::SpeechFirst,
        ..cfg.mwer.clone()
    };
    let mut mwer_lm = mm_lm.clone();
    let mwer = train_mwer(&mut mwer_lm, &corpus.train, val, &mwer_cfg, &vocab, exec)?;
    let test_scores = corpus_lm_scores(&mwer_lm, test, ScoringMode::SpeechFirst, true, &vocab, exec)?;
    let mwer_test = selection_wer(test, &top1_picks(&test_scores, test, mwer_cfg.lambda))?.totals;
    let mwer_result = ModeResult {
        label: "speech_text_sf_mwer".into(),
        mode: ScoringMode::SpeechFirst,
        lambda: mwer_cfg.lambda,
        val: mwer.selected_val,
        test: mwer_test,
        grid: Vec::new(),
    };

    let outcome = ExperimentOutcome {
        first_pass_val: first_pass(val)?,
        first_pass_test: first_pass(test)?,
        oracle_val: oracle_wer(val)?.totals,
        oracle_test: oracle_wer(test)?.totals,
        homophone_share: corpus.stats.homophone_share(),
        text_loss,
        pretrain_loss,
        text,
        speech_first,
        text_first,
        mwer,
        mwer_result,
        cross: None,
    };
    let mut run = ExperimentRun {
        outcome,
        corpus,
        vocab,
        text_lm,
        speech_text_lm: mm_lm,
        mwer_lm,
    };
    if cfg.cross_domain {
        run.outcome.cross = Some(run_cross_domain(cfg, &run, exec, progress)?);
    }
    Ok(run)
}

/// Trains a second speech-text LM on the same data plus speech-only data
/// from a second domain and compares speech-first rescoring on that domain
/// against the run's pre-MWER model.
pub fn run_cross_domain(
    cfg: &ExperimentConfig,
    run: &ExperimentRun,
    exec: Execution,
    progress: &mut dyn FnMut(&str),
) -> Result<CrossDomainResult> {
    progress("second-domain comparison");
    let vocab = &run.vocab;
    let grid = &cfg.lambda_grid;
    let target = generate_synthetic_corpus(&target_domain_config(cfg))?;
    let c = &run.corpus;
    let pretrain_data = build_pretraining_sequences(&c.train, &c.unpaired_text, &c.unpaired_speech, vocab)?;
    let mut adapted_data = pretrain_data.clone();
    adapted_data.extend(speech_sequences(&target.unpaired_speech, vocab)?);
    // Same number of epochs as the unadapted model, so both see the source
    // data equally often.
    let adapted_cfg = TrainConfig {
        max_steps: (cfg.pretrain.max_steps * adapted_data.len()).div_ceil(pretrain_data.len()),
        ..cfg.pretrain.clone()
    };
    let (adapted_lm, adapted_loss) = train_model(cfg.model, cfg.model_seed, vocab, &adapted_data, &adapted_cfg, exec)?;
    let (tv, tt) = (&target.validation, &target.test);
    let unadapted = evaluate_mode("target_sf_unadapted", &run.speech_text_lm, ScoringMode::SpeechFirst, tv, tt, grid, vocab, exec)?;
    let adapted = evaluate_mode("target_sf_adapted", &adapted_lm, ScoringMode::SpeechFirst, tv, tt, grid, vocab, exec)?;
    Ok(CrossDomainResult {
        first_pass_test: first_pass(tt)?,
        oracle_test: oracle_wer(tt)?.totals,
        unadapted,
        adapted,
        adapted_loss,
    })
}
