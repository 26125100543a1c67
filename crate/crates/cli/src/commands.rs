use std::fmt::Write as _;
use std::path::Path;

use mmrescore::data::{
    build_pretraining_sequences, generate_synthetic_corpus, read_nbest, render_frames, speech_sequences,
    text_sequences, unit_prototypes, write_nbest, SynthConfig,
};
use mmrescore::experiment::{run_experiment, ExperimentConfig, ModelShape};
use mmrescore::lm::{
    continue_train, load_transformer, save_transformer, train_differentiable, TinyTransformerLM, TrainConfig,
};
use mmrescore::metrics::{oracle_wer, selection_wer};
use mmrescore::mwer::{train_mwer, MWERConfig};
use mmrescore::nbest::NBestEntry;
use mmrescore::parallel::Execution;
use mmrescore::rescore::{rerank_corpus, tune_lambda, Lambda, RescoreConfig, ScoringMode};
use mmrescore::vocab::{
    quantize_frames, read_codebook, read_frames, read_token_streams, read_vocabulary, train_kmeans_traced,
    write_codebook, write_frames, write_token_streams, write_vocabulary, AudioTokenStream, Vocabulary,
};
use mmrescore::Error;

use crate::config::{Settings, UsageError};

pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn execution(s: &Settings) -> Result<Execution> {
    Ok(if s.get::<bool>("parallel")? {
        Execution::Parallel
    } else {
        Execution::Sequential
    })
}

fn seed_or(s: &Settings, name: &str, fallback: u64) -> Result<u64> {
    match s.str(name) {
        "auto" => Ok(fallback),
        _ => Ok(s.get(name)?),
    }
}

fn synth_config(s: &Settings) -> Result<SynthConfig> {
    let seed: u64 = s.get("seed")?;
    let reference_in_nbest = match s.str("reference-in-nbest") {
        "natural" => None,
        _ => Some(s.get("reference-in-nbest")?),
    };
    Ok(SynthConfig {
        n_train: s.get("n-train")?,
        n_validation: s.get("n-validation")?,
        n_test: s.get("n-test")?,
        n_unpaired_text: s.get("n-unpaired-text")?,
        n_unpaired_speech: s.get("n-unpaired-speech")?,
        words_per_utterance: (s.get("min-words")?, s.get("max-words")?),
        lexicon_size: s.get("lexicon-size")?,
        homophone_pairs: s.get("homophone-pairs")?,
        n_speech_units: s.get("n-speech-units")?,
        successors: s.get("successors")?,
        n_best: s.get("n-best")?,
        sub_rate: s.get("sub-rate")?,
        ins_rate: s.get("ins-rate")?,
        del_rate: s.get("del-rate")?,
        homophone_fraction: s.get("homophone-fraction")?,
        audio_noise: s.get("audio-noise")?,
        am_score_noise: s.get("am-score-noise")?,
        reference_in_nbest,
        domain: s.str("domain").to_string(),
        lexicon_seed: seed_or(s, "lexicon-seed", seed + 1)?,
        grammar_seed: seed_or(s, "grammar-seed", seed + 2)?,
        seed: seed + 3,
    })
}

fn model_shape(s: &Settings) -> Result<ModelShape> {
    Ok(ModelShape {
        n_layers: s.get("n-layers")?,
        n_heads: s.get("n-heads")?,
        d_model: s.get("d-model")?,
        d_ff: s.get("d-ff")?,
        max_len: s.get("max-len")?,
    })
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        learning_rate: s.get("lr")?,
        warmup_steps: s.get("warmup")?,
        decay: s.get("decay")?,
        batch_size: s.get("batch")?,
        max_steps: s.get("steps")?,
        seed: s.get("seed")?,
        max_grad_norm: s.get("clip")?,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn load_model(s: &Settings) -> Result<(Vocabulary, TinyTransformerLM)> {
    let vocab = read_vocabulary(&s.path("vocab")?)?;
    let lm = load_transformer(&s.path("checkpoint")?, &vocab)?;
    Ok((vocab, lm))
}

fn loss_rows(out: &mut String, losses: &[f64]) {
    out.push_str("step\tloss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{}\t{l:.6}", i + 1);
    }
}

fn first_pass_wer(corpus: &[NBestEntry]) -> Result<f64> {
    Ok(selection_wer(corpus, &vec![0; corpus.len()])?.wer)
}

pub fn gen_data(s: &Settings) -> Result<String> {
    let cfg = synth_config(s)?;
    let dir = s.path("out-dir")?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let corpus = generate_synthetic_corpus(&cfg)?;
    let vocab = corpus.vocabulary()?;
    write_nbest(&dir.join("train.nbest"), &corpus.train)?;
    write_nbest(&dir.join("dev.nbest"), &corpus.validation)?;
    write_nbest(&dir.join("test.nbest"), &corpus.test)?;
    let mut text = corpus.unpaired_text.join("\n");
    text.push('\n');
    write_text(&dir.join("text.txt"), &text)?;
    write_token_streams(&dir.join("speech.tok"), &corpus.unpaired_speech)?;
    write_vocabulary(&dir.join("vocab.txt"), &vocab)?;

    let dim: usize = s.get("frame-dim")?;
    if dim > 0 {
        let protos = unit_prototypes(cfg.n_speech_units, dim, cfg.seed);
        let mut frames = Vec::new();
        for (i, stream) in corpus.unpaired_speech.iter().enumerate() {
            frames.extend(render_frames(&stream.units, &protos, s.get("frame-spread")?, cfg.seed + i as u64)?);
        }
        write_frames(&dir.join("speech.frames"), dim, &frames)?;
    }

    let mut out = s.header();
    out.push_str("key\tvalue\n");
    let rows = [
        ("vocab_size", vocab.size().to_string()),
        ("train", corpus.train.len().to_string()),
        ("validation", corpus.validation.len().to_string()),
        ("test", corpus.test.len().to_string()),
        ("homophone_share", format!("{:.6}", corpus.stats.homophone_share())),
    ];
    for (k, v) in rows {
        let _ = writeln!(out, "{k}\t{v}");
    }
    for (name, split) in [("validation", &corpus.validation), ("test", &corpus.test)] {
        if !split.is_empty() {
            let _ = writeln!(out, "{name}_first_pass_wer\t{:.6}", first_pass_wer(split)?);
            let _ = writeln!(out, "{name}_oracle_wer\t{:.6}", oracle_wer(split)?.wer);
        }
    }
    Ok(out)
}

pub fn train_kmeans_cmd(s: &Settings) -> Result<String> {
    let frames = read_frames(&s.path("frames")?)?;
    let (cb, history) = train_kmeans_traced(&frames, s.get("k")?, s.get("max-iters")?, s.get("seed")?)?;
    write_codebook(&s.path("out")?, &cb)?;
    let mut out = s.header();
    out.push_str("iteration\tinertia\n");
    for (i, v) in history.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{v:.6}");
    }
    Ok(out)
}

pub fn quantize(s: &Settings) -> Result<String> {
    let frames = read_frames(&s.path("frames")?)?;
    let cb = read_codebook(&s.path("codebook")?)?;
    let vocab = read_vocabulary(&s.path("vocab")?)?;
    let stream = quantize_frames(&cb, &vocab, &frames, s.str("utt-id"))?;
    write_token_streams(&s.path("out")?, std::slice::from_ref(&stream))?;
    let mut out = s.header();
    let _ = writeln!(out, "units\t{}", stream.units.len());
    Ok(out)
}

pub fn train_lm(s: &Settings) -> Result<String> {
    let vocab = read_vocabulary(&s.path("vocab")?)?;
    let paired = match s.opt_path("nbest") {
        Some(p) => read_nbest(&p)?,
        None => Vec::new(),
    };
    let text = match s.opt_path("text") {
        Some(p) => read_lines(&p)?,
        None => Vec::new(),
    };
    let speech: Vec<AudioTokenStream> = match s.opt_path("speech") {
        Some(p) => read_token_streams(&p)?,
        None => Vec::new(),
    };
    let data = match s.str("format") {
        "multimodal" => build_pretraining_sequences(&paired, &text, &speech, &vocab)?,
        "text" => {
            let refs = paired.iter().map(|e| e.reference()).collect::<mmrescore::Result<Vec<_>>>()?;
            text_sequences(refs.into_iter().chain(text.iter().map(String::as_str)), &vocab)?
        }
        other => return Err(CliError::Usage(format!("unknown --format {other:?} (multimodal|text)"))),
    };
    if data.is_empty() {
        return Err(Error::EmptyCorpus.into());
    }
    let cfg = train_config(s)?;
    let mut lm = TinyTransformerLM::new(model_shape(s)?.with_vocab(vocab.size()), s.get("seed")?)?;
    let curve = train_differentiable(&mut lm, &data, &cfg, execution(s)?)?;
    save_transformer(&s.path("out")?, &lm, &vocab)?;
    let mut out = s.header();
    let _ = writeln!(out, "# sequences = {}", data.len());
    loss_rows(&mut out, &curve.losses);
    Ok(out)
}

pub fn adapt_lm(s: &Settings) -> Result<String> {
    let (vocab, mut lm) = load_model(s)?;
    let streams = read_token_streams(&s.path("speech")?)?;
    let data = speech_sequences(&streams, &vocab)?;
    let curve = continue_train(&mut lm, &data, &train_config(s)?)?;
    save_transformer(&s.path("out")?, &lm, &vocab)?;
    let mut out = s.header();
    let _ = writeln!(out, "# sequences = {}", data.len());
    loss_rows(&mut out, &curve.losses);
    Ok(out)
}

fn mode(s: &Settings) -> Result<ScoringMode> {
    s.str("mode").parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn lambda(s: &Settings) -> Result<Lambda> {
    s.str("lambda").parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

pub fn rescore(s: &Settings) -> Result<String> {
    let (vocab, lm) = load_model(s)?;
    let corpus = read_nbest(&s.path("nbest")?)?;
    let cfg = RescoreConfig {
        mode: mode(s)?,
        lambda: lambda(s)?,
        include_shared_audio_prefix: s.get("include-audio-prefix")?,
    };
    let ranked = rerank_corpus(&lm, &corpus, &cfg, &vocab, execution(s)?)?;
    let mut out = s.header();
    out.push_str("utt_id\trank\tindex\tlm_logprob\tam_logprob\tcombined\ttext\n");
    for (e, list) in corpus.iter().zip(&ranked) {
        for (r, h) in list.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{r}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                e.utt_id, h.original_index, h.lm_logprob, h.am_logprob, h.combined, h.hypothesis.text
            );
        }
    }
    if corpus.iter().all(|e| e.reference.is_some()) {
        let picks: Vec<usize> = ranked.iter().map(|l| l[0].original_index).collect();
        let _ = writeln!(out, "# top1_wer = {:.6}", selection_wer(&corpus, &picks)?.wer);
    }
    Ok(out)
}

pub fn tune_lambda_cmd(s: &Settings) -> Result<String> {
    let (vocab, lm) = load_model(s)?;
    let corpus = read_nbest(&s.path("nbest")?)?;
    let grid = s
        .str("grid")
        .split(',')
        .map(|g| g.trim().parse::<Lambda>())
        .collect::<mmrescore::Result<Vec<_>>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let base = RescoreConfig {
        mode: mode(s)?,
        ..RescoreConfig::default()
    };
    let t = tune_lambda(&lm, &corpus, &base, &grid, &vocab)?;
    let mut out = s.header();
    out.push_str("lambda\terrors\tref_words\twer\n");
    for (l, c) in &t.table {
        let _ = writeln!(out, "{l}\t{}\t{}\t{:.6}", c.errors(), c.ref_words, c.wer());
    }
    let _ = writeln!(out, "best\t{}\t\t{:.6}", t.best, t.wer);
    Ok(out)
}

pub fn train_mwer_cmd(s: &Settings) -> Result<String> {
    let (vocab, mut lm) = load_model(s)?;
    let train = read_nbest(&s.path("train")?)?;
    let validation = read_nbest(&s.path("validation")?)?;
    let cfg = MWERConfig {
        lambda: lambda(s)?,
        mode: mode(s)?,
        include_shared_audio_prefix: true,
        baseline_subtraction: s.get("baseline-subtraction")?,
        train: train_config(s)?,
        checkpoint_every: s.get("checkpoint-every")?,
    };
    let run = train_mwer(&mut lm, &train, &validation, &cfg, &vocab, execution(s)?)?;
    save_transformer(&s.path("out")?, &lm, &vocab)?;
    let mut out = s.header();
    out.push_str(&run.log_tsv());
    let _ = writeln!(out, "# selected_step = {}", run.selected_step);
    let _ = writeln!(out, "# initial_val_wer = {:.6}", run.initial_val_wer());
    let _ = writeln!(out, "# selected_val_wer = {:.6}", run.selected_val_wer());
    Ok(out)
}

pub fn eval(s: &Settings) -> Result<String> {
    let corpus = read_nbest(&s.path("nbest")?)?;
    let report = match s.str("hyp-source") {
        "top1" => selection_wer(&corpus, &vec![0; corpus.len()])?,
        "oracle" => oracle_wer(&corpus)?,
        other => return Err(CliError::Usage(format!("unknown --hyp-source {other:?} (top1|oracle)"))),
    };
    let mut out = s.header();
    out.push_str(&report.to_tsv());
    Ok(out)
}

pub fn report(s: &Settings) -> Result<String> {
    let seed: u64 = s.get("seed")?;
    let mut cfg = ExperimentConfig::seeded(seed);
    cfg.synth = synth_config(s)?;
    cfg.model = model_shape(s)?;
    cfg.pretrain.max_steps = s.get("pretrain-steps")?;
    cfg.text_train.max_steps = s.get("text-steps")?;
    cfg.mwer.train.max_steps = s.get("mwer-steps")?;
    cfg.mwer.checkpoint_every = s.get("checkpoint-every")?;
    cfg.cross_domain = s.get("cross-domain")?;
    cfg.target_speech = s.get("target-speech")?;
    cfg.target_eval = s.get("target-eval")?;
    let mut progress = |m: &str| eprintln!("mmrescore: {m}");
    let run = run_experiment(&cfg, execution(s)?, &mut progress)?;
    let mut out = s.header();
    out.push_str(&run.outcome.to_tsv(&cfg));
    Ok(out)
}
