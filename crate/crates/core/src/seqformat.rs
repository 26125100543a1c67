//! The four pre-training / scoring layouts:
//!
//! ```text
//! TextOnly     <text-bos> y1..yT <eos>
//! SpeechOnly   <speech-bos> x1..xL <eos>
//! TextFirst    <text-bos> y1..yT <speech-bos> x1..xL <eos>
//! SpeechFirst  <speech-bos> x1..xL <text-bos> y1..yT <eos>
//! ```
//!
//! A segment covers its bos marker plus payload; the single trailing eos
//! belongs to no segment.

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, EOS, SPEECH_BOS, TEXT_BOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Text,
    Speech,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SequenceFormat {
    TextOnly,
    SpeechOnly,
    TextFirst,
    SpeechFirst,
}

impl SequenceFormat {
    pub const ALL: [SequenceFormat; 4] = [
        SequenceFormat::TextOnly,
        SequenceFormat::SpeechOnly,
        SequenceFormat::TextFirst,
        SequenceFormat::SpeechFirst,
    ];

    pub fn order(self) -> &'static [Modality] {
        match self {
            SequenceFormat::TextOnly => &[Modality::Text],
            SequenceFormat::SpeechOnly => &[Modality::Speech],
            SequenceFormat::TextFirst => &[Modality::Text, Modality::Speech],
            SequenceFormat::SpeechFirst => &[Modality::Speech, Modality::Text],
        }
    }
}

/// Half-open span `[start, end)` of one modality, bos marker included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub modality: Modality,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultimodalSequence {
    pub ids: Vec<TokenId>,
    pub segments: Vec<Segment>,
    pub format: SequenceFormat,
}

fn bos(m: Modality) -> TokenId {
    match m {
        Modality::Text => TEXT_BOS,
        Modality::Speech => SPEECH_BOS,
    }
}

/// Builds a layout. `text_ids` may be empty (an empty hypothesis is still
/// scoreable); a speech payload must be nonempty.
pub fn build_sequence(
    vocab: &Vocabulary,
    format: SequenceFormat,
    text_ids: Option<&[TokenId]>,
    speech_ids: Option<&[TokenId]>,
) -> Result<MultimodalSequence> {
    let payload = |m: Modality| -> Result<&[TokenId]> {
        match m {
            Modality::Text => {
                let ids = text_ids.ok_or_else(|| {
                    Error::invalid(format!("{format:?} requires a text payload"))
                })?;
                if let Some(&bad) = ids.iter().find(|&&id| !vocab.is_text_like(id)) {
                    return Err(Error::ModalityViolation(format!(
                        "id {bad} in text payload"
                    )));
                }
                Ok(ids)
            }
            Modality::Speech => {
                let ids = speech_ids
                    .filter(|ids| !ids.is_empty())
                    .ok_or_else(|| {
                        Error::invalid(format!("{format:?} requires a nonempty speech payload"))
                    })?;
                if let Some(&bad) = ids.iter().find(|&&id| !vocab.is_speech(id)) {
                    return Err(Error::ModalityViolation(format!(
                        "id {bad} in speech payload"
                    )));
                }
                Ok(ids)
            }
        }
    };

    let mut ids = Vec::new();
    let mut segments = Vec::with_capacity(2);
    for &m in format.order() {
        let p = payload(m)?;
        let start = ids.len();
        ids.push(bos(m));
        ids.extend_from_slice(p);
        segments.push(Segment {
            modality: m,
            start,
            end: ids.len(),
        });
    }
    ids.push(EOS);
    Ok(MultimodalSequence {
        ids,
        segments,
        format,
    })
}

impl MultimodalSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn segment_bounds(&self, modality: Modality) -> Result<(usize, usize)> {
        self.segments
            .iter()
            .find(|s| s.modality == modality)
            .map(|s| (s.start, s.end))
            .ok_or_else(|| {
                Error::invalid(format!("{:?} sequence has no {modality:?} segment", self.format))
            })
    }

    /// Payload ids of one modality, without its bos marker.
    pub fn payload(&self, modality: Modality) -> Result<&[TokenId]> {
        let (s, e) = self.segment_bounds(modality)?;
        Ok(&self.ids[s + 1..e])
    }

    /// Checks layout, tiling and modality purity against `vocab`.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let order = self.format.order();
        if self.segments.len() != order.len() {
            return Err(Error::invalid("segment count does not match format"));
        }
        let mut pos = 0;
        for (seg, &m) in self.segments.iter().zip(order) {
            if seg.modality != m || seg.start != pos || seg.end <= seg.start {
                return Err(Error::invalid(format!("segment {seg:?} out of place")));
            }
            if self.ids[seg.start] != bos(m) {
                return Err(Error::invalid(format!("segment {seg:?} lacks its bos marker")));
            }
            let pure = self.ids[seg.start + 1..seg.end].iter().all(|&id| match m {
                Modality::Text => vocab.is_text_like(id),
                Modality::Speech => vocab.is_speech(id),
            });
            if !pure {
                return Err(Error::ModalityViolation(format!("impure {m:?} segment")));
            }
            pos = seg.end;
        }
        if pos + 1 != self.ids.len() || self.ids[pos] != EOS {
            return Err(Error::invalid("sequence must end with exactly one eos"));
        }
        Ok(())
    }
}
