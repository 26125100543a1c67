//! N-best corpus files: one JSON object per line.
//!
//! ```text
//! {"utt_id":"u1","audio_tokens":[3,9,9],"reference":"a b","hyps":[{"text":"a b","am_logprob":-1.5}]}
//! ```
//!
//! `audio_tokens` holds speech unit indices; it and `reference` may be
//! omitted.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nbest::{Hypothesis, NBestEntry};
use crate::vocab::AudioTokenStream;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HypRecord {
    text: String,
    am_logprob: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    utt_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio_tokens: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference: Option<String>,
    hyps: Vec<HypRecord>,
}

impl From<&NBestEntry> for Record {
    fn from(e: &NBestEntry) -> Self {
        Record {
            utt_id: e.utt_id.clone(),
            audio_tokens: e.audio.as_ref().map(|a| a.units.clone()),
            reference: e.reference.clone(),
            hyps: e
                .hypotheses
                .iter()
                .map(|h| HypRecord {
                    text: h.text.clone(),
                    am_logprob: h.am_logprob,
                })
                .collect(),
        }
    }
}

impl From<Record> for NBestEntry {
    fn from(r: Record) -> Self {
        NBestEntry {
            audio: r.audio_tokens.map(|u| AudioTokenStream::new(r.utt_id.clone(), u)),
            utt_id: r.utt_id,
            reference: r.reference,
            hypotheses: r.hyps.into_iter().map(|h| Hypothesis::new(h.text, h.am_logprob)).collect(),
        }
    }
}

pub fn write_nbest(path: &Path, entries: &[NBestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        if let Some(h) = e.hypotheses.iter().find(|h| !h.am_logprob.is_finite()) {
            return Err(Error::invalid(format!(
                "utterance {}: non-finite first-pass score for {:?}",
                e.utt_id, h.text
            )));
        }
        let line = serde_json::to_string(&Record::from(e)).map_err(|err| Error::invalid(err.to_string()))?;
        let _ = writeln!(out, "{line}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads every record; blank lines are skipped. Entries are checked for at
/// least one hypothesis and finite scores, and utterance ids must be unique.
pub fn read_nbest(path: &Path) -> Result<Vec<NBestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        let entry = NBestEntry::from(record);
        entry
            .validate(usize::MAX)
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        if !seen.insert(entry.utt_id.clone()) {
            return Err(Error::parse(path, n + 1, format!("duplicate utt_id {:?}", entry.utt_id)));
        }
        out.push(entry);
    }
    Ok(out)
}
