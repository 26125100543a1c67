//! Per-subcommand settings: built-in defaults, then a `key = value` config
//! file, then command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Arg, ArgAction, ArgMatches, Command};

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const COMMON: &[Key] = &[
    key("seed", "0", "seed for every random choice"),
    key("parallel", "true", "parallelize over utterances and sequences"),
];

const MODEL: &[Key] = &[
    key("n-layers", "2", "transformer layers"),
    key("n-heads", "2", "attention heads"),
    key("d-model", "64", "model width"),
    key("d-ff", "256", "feed-forward width"),
    key("max-len", "64", "maximum sequence length"),
];

const TRAIN: &[Key] = &[
    key("lr", "0.003", "peak learning rate"),
    key("warmup", "100", "linear warmup steps"),
    key("decay", "0.9995", "per-step learning-rate decay after warmup"),
    key("batch", "16", "sequences per step"),
    key("steps", "1000", "optimizer steps"),
    key("clip", "1.0", "global gradient-norm clip, 0 disables"),
];

const SYNTH: &[Key] = &[
    key("n-train", "5000", "paired training utterances"),
    key("n-validation", "500", "validation utterances"),
    key("n-test", "500", "test utterances"),
    key("n-unpaired-text", "2000", "text-only sentences"),
    key("n-unpaired-speech", "2000", "speech-only utterances"),
    key("min-words", "3", "shortest reference"),
    key("max-words", "6", "longest reference"),
    key("lexicon-size", "40", "number of words"),
    key("homophone-pairs", "12", "word pairs the text cannot tell apart"),
    key("n-speech-units", "64", "size of the speech-unit inventory"),
    key("successors", "4", "grammar successors per word class"),
    key("n-best", "10", "hypotheses per utterance"),
    key("sub-rate", "0.12", "per-word substitution rate"),
    key("ins-rate", "0.02", "per-word insertion rate"),
    key("del-rate", "0.02", "per-word deletion rate"),
    key("homophone-fraction", "0.4", "share of substitutions that are homophone swaps"),
    key("audio-noise", "0.3", "per-unit audio corruption probability"),
    key("am-score-noise", "1.0", "first-pass score jitter (std)"),
    key("reference-in-nbest", "0.8", "probability the reference is listed, or `natural`"),
    key("domain", "syn", "utterance id prefix"),
    key("lexicon-seed", "auto", "seed for word forms and audio signatures (auto: seed + 1)"),
    key("grammar-seed", "auto", "seed for the grammar (auto: seed + 2)"),
];

pub const SUBCOMMANDS: &[(&str, &str)] = &[
    ("gen-data", "generate a synthetic corpus"),
    ("train-kmeans", "train a k-means codebook on feature frames"),
    ("quantize", "map feature frames to speech units"),
    ("train-lm", "train a language model"),
    ("adapt-lm", "continue training a language model on speech-only data"),
    ("rescore", "rerank n-best lists"),
    ("tune-lambda", "grid-search the interpolation weight"),
    ("train-mwer", "fine-tune a language model with the MWER criterion"),
    ("eval", "word error rate of an n-best corpus"),
    ("report", "run the full synthetic experiment"),
];

pub fn keys_for(cmd: &str) -> Vec<Key> {
    let own: Vec<Key> = match cmd {
        "gen-data" => [&[key("out-dir", "", "output directory"), key("frame-dim", "0", "write frames for speech-only data when > 0"), key("frame-spread", "0.3", "frame noise std")][..], SYNTH].concat(),
        "train-kmeans" => vec![
            key("frames", "", "input frame file"),
            key("k", "64", "number of centroids"),
            key("max-iters", "100", "Lloyd iteration cap"),
            key("out", "", "codebook output file"),
        ],
        "quantize" => vec![
            key("frames", "", "input frame file"),
            key("codebook", "", "codebook file"),
            key("vocab", "", "vocabulary file"),
            key("utt-id", "utt", "utterance id of the stream"),
            key("out", "", "token stream output file"),
        ],
        "train-lm" => [
            &[
                key("vocab", "", "vocabulary file"),
                key("nbest", "", "paired corpus (references and audio)"),
                key("text", "", "text-only sentences, one per line"),
                key("speech", "", "speech-only token streams"),
                key("format", "multimodal", "multimodal | text"),
                key("out", "", "checkpoint output file"),
            ][..],
            MODEL,
            TRAIN,
        ]
        .concat(),
        "adapt-lm" => [
            &[
                key("vocab", "", "vocabulary file"),
                key("checkpoint", "", "input checkpoint"),
                key("speech", "", "speech-only token streams"),
                key("out", "", "checkpoint output file"),
            ][..],
            TRAIN,
        ]
        .concat(),
        "rescore" => vec![
            key("vocab", "", "vocabulary file"),
            key("checkpoint", "", "language model checkpoint"),
            key("nbest", "", "n-best corpus"),
            key("mode", "sf", "text | sf | tf"),
            key("lambda", "0.5", "first-pass weight, or am_only"),
            key("include-audio-prefix", "true", "add the shared audio-prefix likelihood in sf mode"),
        ],
        "tune-lambda" => vec![
            key("vocab", "", "vocabulary file"),
            key("checkpoint", "", "language model checkpoint"),
            key("nbest", "", "validation n-best corpus"),
            key("mode", "sf", "text | sf | tf"),
            key("grid", "0,0.05,0.1,0.2,0.35,0.5,0.75,1,1.5,2,am_only", "comma-separated weights"),
        ],
        "train-mwer" => [
            &[
                key("vocab", "", "vocabulary file"),
                key("checkpoint", "", "input checkpoint"),
                key("train", "", "training n-best corpus"),
                key("validation", "", "validation n-best corpus"),
                key("mode", "sf", "text | sf | tf"),
                key("lambda", "0.5", "frozen first-pass weight"),
                key("baseline-subtraction", "false", "subtract the mean error in the gradient"),
                key("checkpoint-every", "50", "validation interval in updates"),
                key("out", "", "checkpoint output file"),
            ][..],
            &[
                key("lr", "0.0003", "peak learning rate"),
                key("warmup", "20", "linear warmup steps"),
                key("decay", "1.0", "per-step learning-rate decay after warmup"),
                key("batch", "1", "utterances per update"),
                key("steps", "600", "updates"),
                key("clip", "1.0", "global gradient-norm clip, 0 disables"),
            ][..],
        ]
        .concat(),
        "eval" => vec![
            key("nbest", "", "n-best corpus with references"),
            key("hyp-source", "top1", "top1 | oracle"),
        ],
        "report" => [
            &[
                key("pretrain-steps", "1000", "speech-text LM steps"),
                key("text-steps", "800", "text-only LM steps"),
                key("mwer-steps", "600", "MWER updates"),
                key("checkpoint-every", "50", "MWER validation interval"),
                key("cross-domain", "true", "run the second-domain comparison"),
                key("target-speech", "4000", "second-domain speech-only utterances"),
                key("target-eval", "500", "second-domain validation and test utterances"),
            ][..],
            SYNTH,
            MODEL,
        ]
        .concat(),
        _ => Vec::new(),
    };
    [own.as_slice(), COMMON].concat()
}

pub fn command() -> Command {
    let mut cmd = Command::new("mmrescore")
        .version(mmrescore::VERSION)
        .about("Speech-text language model n-best rescoring")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value settings applied before flags"),
        );
        for k in keys_for(name) {
            let help = if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            };
            sub = sub.arg(
                Arg::new(k.name)
                    .long(k.name)
                    .value_name("VALUE")
                    .allow_hyphen_values(true)
                    .action(ArgAction::Set)
                    .help(help),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Fully resolved settings of one invocation, in table order.
#[derive(Debug, Clone)]
pub struct Settings {
    pub command: String,
    values: Vec<(&'static str, String)>,
}

fn parse_config_file(path: &Path, keys: &[Key]) -> Result<Vec<(&'static str, String)>, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
        let name = k.trim().replace('_', "-");
        let spec = keys
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| UsageError(format!("{}:{}: unknown key {name:?}", path.display(), n + 1)))?;
        out.push((spec.name, v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    pub fn resolve(command: &str, matches: &ArgMatches) -> Result<Self, UsageError> {
        let keys = keys_for(command);
        let mut values: Vec<(&'static str, String)> = keys.iter().map(|k| (k.name, k.default.to_string())).collect();
        let mut set = |name: &str, v: String| {
            if let Some(slot) = values.iter_mut().find(|(k, _)| *k == name) {
                slot.1 = v;
            }
        };
        if let Some(path) = matches.get_one::<String>("config") {
            for (k, v) in parse_config_file(Path::new(path), &keys)? {
                set(k, v);
            }
        }
        for k in &keys {
            if let Some(v) = matches.get_one::<String>(k.name) {
                set(k.name, v.clone());
            }
        }
        Ok(Self {
            command: command.to_string(),
            values,
        })
    }

    pub fn str(&self, name: &str) -> &str {
        self.values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("no setting {name:?} for {}", self.command))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, UsageError> {
        let v = self.str(name);
        v.parse()
            .map_err(|_| UsageError(format!("invalid value {v:?} for --{name}")))
    }

    pub fn path(&self, name: &str) -> Result<PathBuf, UsageError> {
        self.opt_path(name)
            .ok_or_else(|| UsageError(format!("--{name} is required for {}", self.command)))
    }

    pub fn opt_path(&self, name: &str) -> Option<PathBuf> {
        let v = self.str(name);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    /// `# key = value` lines preceded by the version, for report headers.
    pub fn header(&self) -> String {
        let mut out = format!("# mmrescore {} {}\n", mmrescore::VERSION, self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out
    }
}
