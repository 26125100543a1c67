//! Text normalization, word-level Levenshtein alignment and WER bookkeeping.

use std::fmt::Write as _;

use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::nbest::NBestEntry;

/// Fixed normalization rules, applied in order: lowercase, drop punctuation
/// (Unicode category P*), collapse whitespace runs, trim.
#[derive(Debug, Clone, Copy, Default)]
pub struct Normalizer;

impl Normalizer {
    pub fn normalize(&self, s: &str) -> String {
        let lowered = s.to_lowercase();
        let mut out = String::with_capacity(lowered.len());
        let mut pending_space = false;
        for c in lowered.chars().filter(|&c| !is_punctuation(c)) {
            if c.is_whitespace() {
                pending_space = !out.is_empty();
                continue;
            }
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
        out
    }
}

pub fn normalize_text(s: &str) -> String {
    Normalizer.normalize(s)
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Edit counts from one optimal alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Alignment {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost Levenshtein distance between a hypothesis and a reference.
///
/// The S/I/D split comes from a backtrace that prefers the diagonal
/// (match or substitution), then deletion (reference word missing from the
/// hypothesis), then insertion.
pub fn edit_distance<T: PartialEq>(hyp: &[T], reference: &[T]) -> Alignment {
    let rows = reference.len() + 1;
    let cols = hyp.len() + 1;
    let mut dp = vec![0usize; rows * cols];
    for i in 0..rows {
        dp[i * cols] = i;
    }
    for (j, cell) in dp.iter_mut().enumerate().take(cols) {
        *cell = j;
    }
    for i in 1..rows {
        for j in 1..cols {
            let cost = usize::from(reference[i - 1] != hyp[j - 1]);
            let diag = dp[(i - 1) * cols + j - 1] + cost;
            let del = dp[(i - 1) * cols + j] + 1;
            let ins = dp[i * cols + j - 1] + 1;
            dp[i * cols + j] = diag.min(del).min(ins);
        }
    }

    let mut out = Alignment {
        distance: dp[rows * cols - 1],
        ..Alignment::default()
    };
    let (mut i, mut j) = (reference.len(), hyp.len());
    while i > 0 || j > 0 {
        let here = dp[i * cols + j];
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hyp[j - 1]);
            if dp[(i - 1) * cols + j - 1] + cost == here {
                out.substitutions += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[(i - 1) * cols + j] + 1 == here {
            out.deletions += 1;
            i -= 1;
        } else {
            out.insertions += 1;
            j -= 1;
        }
    }
    debug_assert_eq!(
        out.distance,
        out.substitutions + out.insertions + out.deletions
    );
    out
}

/// Word edit distance between two whitespace-separated strings.
pub fn word_edit_distance(hyp: &str, reference: &str) -> Alignment {
    edit_distance(&words(hyp), &words(reference))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Errors per reference word; `NaN` when there are no reference words.
    pub fn wer(&self) -> f64 {
        self.errors() as f64 / self.ref_words as f64
    }

    fn add(&mut self, other: &ErrorCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.ref_words += other.ref_words;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceErrors {
    pub utt_id: String,
    pub counts: ErrorCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WerReport {
    pub totals: ErrorCounts,
    pub wer: f64,
    pub utterances: Vec<UtteranceErrors>,
}

impl WerReport {
    fn from_utterances(utterances: Vec<UtteranceErrors>) -> Result<Self> {
        let mut totals = ErrorCounts::default();
        for u in &utterances {
            totals.add(&u.counts);
        }
        if totals.ref_words == 0 {
            return Err(Error::invalid("corpus has zero reference words"));
        }
        Ok(WerReport {
            wer: totals.errors() as f64 / totals.ref_words as f64,
            totals,
            utterances,
        })
    }

    /// Tab-separated: header, one row per utterance, `TOTAL` summary row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("utt_id\tsub\tins\tdel\tref_words\twer\n");
        let mut row = |id: &str, c: &ErrorCounts| {
            let wer = if c.ref_words == 0 {
                0.0
            } else {
                c.errors() as f64 / c.ref_words as f64
            };
            let _ = writeln!(
                out,
                "{id}\t{}\t{}\t{}\t{}\t{wer:.6}",
                c.substitutions, c.insertions, c.deletions, c.ref_words
            );
        };
        for u in &self.utterances {
            row(&u.utt_id, &u.counts);
        }
        row("TOTAL", &self.totals);
        out
    }
}

fn counts_for(hyp: &str, reference: &str) -> ErrorCounts {
    let ref_words = words(reference);
    let a = edit_distance(&words(hyp), &ref_words);
    ErrorCounts {
        substitutions: a.substitutions,
        insertions: a.insertions,
        deletions: a.deletions,
        ref_words: ref_words.len(),
    }
}

/// Pooled WER over `(utt_id, hypothesis, reference)` triples.
pub fn corpus_wer<'a, I>(pairs: I) -> Result<WerReport>
where
    I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
{
    let utterances = pairs
        .into_iter()
        .map(|(id, hyp, reference)| UtteranceErrors {
            utt_id: id.to_string(),
            counts: counts_for(hyp, reference),
        })
        .collect();
    WerReport::from_utterances(utterances)
}

/// Index of the hypothesis closest to the reference (lowest index on ties).
pub fn oracle_index(entry: &NBestEntry) -> Result<usize> {
    let reference = entry
        .reference
        .as_deref()
        .ok_or_else(|| Error::MissingReference(entry.utt_id.clone()))?;
    let ref_words = words(reference);
    let mut best = (usize::MAX, 0);
    for (i, h) in entry.hypotheses.iter().enumerate() {
        let d = edit_distance(&words(&h.text), &ref_words).distance;
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best.1)
}

pub fn oracle_wer(corpus: &[NBestEntry]) -> Result<WerReport> {
    let picks = corpus
        .iter()
        .map(oracle_index)
        .collect::<Result<Vec<_>>>()?;
    selection_wer(corpus, &picks)
}

/// Pooled WER when hypothesis `picks[u]` is chosen for utterance `u`.
pub fn selection_wer(corpus: &[NBestEntry], picks: &[usize]) -> Result<WerReport> {
    if corpus.len() != picks.len() {
        return Err(Error::invalid("one pick per utterance required"));
    }
    let mut triples = Vec::with_capacity(corpus.len());
    for (entry, &pick) in corpus.iter().zip(picks) {
        let reference = entry
            .reference
            .as_deref()
            .ok_or_else(|| Error::MissingReference(entry.utt_id.clone()))?;
        let hyp = entry
            .hypotheses
            .get(pick)
            .ok_or_else(|| Error::invalid(format!("pick {pick} out of range")))?;
        triples.push((entry.utt_id.as_str(), hyp.text.as_str(), reference));
    }
    corpus_wer(triples)
}

/// Relative WER reduction in percent.
pub fn relative_improvement(base_wer: f64, new_wer: f64) -> Result<f64> {
    if !(base_wer > 0.0) {
        return Err(Error::invalid("base WER must be positive"));
    }
    Ok(100.0 * (base_wer - new_wer) / base_wer)
}
