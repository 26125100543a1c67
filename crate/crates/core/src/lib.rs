//! Second-pass rescoring of ASR n-best lists with causal language models over
//! joint text and discrete-speech-unit vocabularies.
//!
//! The crate is organized bottom-up:
//!
//! * [`vocab`]: joint vocabulary, word tokenizer, k-means speech units
//! * [`seqformat`]: the four text/speech sequence layouts
//! * [`lm`]: causal LM trait, add-k n-gram model, tiny transformer with
//!   reverse-mode gradients, training
//! * [`rescore`]: text-only / speech-first / text-first scoring, interpolation
//!   with first-pass scores, re-ranking, interpolation-weight tuning
//! * [`mwer`]: minimum word error rate fine-tuning
//! * [`metrics`]: normalization, edit distance, WER, oracle WER
//! * [`data`]: n-best files and the synthetic corpus generator
//! * [`experiment`]: the end-to-end synthetic pipeline and its report

pub mod data;
pub mod error;
pub mod experiment;
pub mod lm;
pub mod metrics;
pub mod mwer;
pub mod nbest;
pub mod parallel;
pub mod rescore;
pub mod seqformat;
pub mod vocab;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
