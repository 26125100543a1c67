//! N-best list data types shared by rescoring, metrics and file I/O.

use crate::vocab::AudioTokenStream;

/// Default number of hypotheses kept per utterance.
pub const DEFAULT_MAX_HYPOTHESES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Normalized transcript; may be empty.
    pub text: String,
    /// First-pass log-score (natural log).
    pub am_logprob: f64,
}

impl Hypothesis {
    pub fn new(text: impl Into<String>, am_logprob: f64) -> Self {
        Self {
            text: text.into(),
            am_logprob,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub utt_id: String,
    pub audio: Option<AudioTokenStream>,
    pub reference: Option<String>,
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestEntry {
    pub fn validate(&self, max_hypotheses: usize) -> crate::Result<()> {
        if self.hypotheses.is_empty() {
            return Err(crate::Error::invalid(format!(
                "utterance {} has no hypotheses",
                self.utt_id
            )));
        }
        if self.hypotheses.len() > max_hypotheses {
            return Err(crate::Error::invalid(format!(
                "utterance {} has {} hypotheses (max {max_hypotheses})",
                self.utt_id,
                self.hypotheses.len()
            )));
        }
        if let Some(h) = self.hypotheses.iter().find(|h| !h.am_logprob.is_finite()) {
            return Err(crate::Error::invalid(format!(
                "utterance {}: non-finite first-pass score for {:?}",
                self.utt_id, h.text
            )));
        }
        Ok(())
    }

    pub fn reference(&self) -> crate::Result<&str> {
        self.reference
            .as_deref()
            .ok_or_else(|| crate::Error::MissingReference(self.utt_id.clone()))
    }
}
