//! Plain-text formats for frames, speech-unit streams and vocabularies.

use std::fmt::Write as _;
use std::path::Path;

use super::{AudioTokenStream, Vocabulary};
use crate::error::{Error, Result};

pub(crate) fn parse_row(line: &str, dim: usize) -> std::result::Result<Vec<f64>, String> {
    let row = line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if row.len() != dim {
        return Err(format!("expected {dim} values, found {}", row.len()));
    }
    if row.iter().any(|x| !x.is_finite()) {
        return Err("non-finite value".to_string());
    }
    Ok(row)
}

/// Frame file: `dim=<d>` header, then one space-separated frame per line.
pub fn read_frames(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let dim = lines
        .next()
        .and_then(|h| h.trim().strip_prefix("dim="))
        .and_then(|d| d.parse::<usize>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::parse(path, 1, "expected header `dim=<d>`"))?;
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_row(l, dim).map_err(|m| Error::parse(path, n + 2, m)))
        .collect()
}

pub fn write_frames(path: &Path, dim: usize, frames: &[Vec<f64>]) -> Result<()> {
    let mut out = format!("dim={dim}\n");
    for f in frames {
        if f.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: f.len(),
            });
        }
        let row: Vec<String> = f.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Token-stream file: `utt_id<TAB>u1 u2 ...` with speech unit indices.
pub fn read_token_streams(path: &Path) -> Result<Vec<AudioTokenStream>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n + 1, "expected `utt_id<TAB>tokens`"))?;
        if id.is_empty() {
            return Err(Error::parse(path, n + 1, "empty utt_id"));
        }
        let units = rest
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, n + 1, e.to_string()))?;
        out.push(AudioTokenStream::new(id, units));
    }
    Ok(out)
}

pub fn write_token_streams(path: &Path, streams: &[AudioTokenStream]) -> Result<()> {
    let mut out = String::new();
    for s in streams {
        let toks: Vec<String> = s.units.iter().map(u32::to_string).collect();
        let _ = writeln!(out, "{}\t{}", s.utt_id, toks.join(" "));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Vocabulary file: `n_speech=<n>` header, then one lexicon word per line.
pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut out = format!("n_speech={}\n", vocab.n_speech());
    for w in vocab.text_tokens() {
        out.push_str(w);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let n_speech = lines
        .next()
        .and_then(|h| h.trim().strip_prefix("n_speech="))
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| Error::parse(path, 1, "expected header `n_speech=<n>`"))?;
    let words: Vec<&str> = lines.filter(|l| !l.is_empty()).collect();
    Vocabulary::from_lexicon(&words, n_speech)
}
