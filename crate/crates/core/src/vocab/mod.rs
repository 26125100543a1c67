//! Joint text + speech vocabulary.
//!
//! Id layout: the four special tokens, then the text lexicon in first-seen
//! order, then `n_speech` speech units. Speech units are addressed by their
//! unit index (`0..n_speech`) everywhere outside of model input sequences;
//! [`Vocabulary::speech_id`] maps a unit into the shared id space.

mod io;
mod kmeans;

use std::collections::HashMap;
use std::ops::Range;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use io::{read_frames, read_token_streams, read_vocabulary, write_frames, write_token_streams, write_vocabulary};
pub use kmeans::{quantize_frames, read_codebook, train_kmeans, train_kmeans_traced, write_codebook, Codebook};

pub type TokenId = u32;

pub const TEXT_BOS: TokenId = 0;
pub const SPEECH_BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
const N_SPECIAL: usize = 4;

pub const UNK_SURFACE: &str = "<unk>";
const SPECIAL_SURFACES: [&str; N_SPECIAL] = ["<text-bos>", "<speech-bos>", "<eos>", UNK_SURFACE];

/// Default source frame rate of speech units, in tokens per second.
pub const DEFAULT_FRAME_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token<'a> {
    Special(TokenId),
    Text(&'a str),
    Speech(u32),
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    text_tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    n_speech: usize,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.text_tokens == other.text_tokens && self.n_speech == other.n_speech
    }
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit lexicon (duplicates are dropped,
    /// first occurrence wins).
    pub fn from_lexicon<S: AsRef<str>>(words: &[S], n_speech: usize) -> Result<Self> {
        if n_speech == 0 {
            return Err(Error::invalid("n_speech must be at least 1"));
        }
        let mut text_tokens = Vec::new();
        let mut index = HashMap::new();
        for w in words {
            let w = w.as_ref();
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("bad lexicon entry {w:?}")));
            }
            if w == UNK_SURFACE || index.contains_key(w) {
                continue;
            }
            index.insert(w.to_string(), (N_SPECIAL + text_tokens.len()) as TokenId);
            text_tokens.push(w.to_string());
        }
        Ok(Self {
            text_tokens,
            index,
            n_speech,
        })
    }

    pub fn size(&self) -> usize {
        N_SPECIAL + self.text_tokens.len() + self.n_speech
    }

    pub fn n_speech(&self) -> usize {
        self.n_speech
    }

    pub fn text_tokens(&self) -> &[String] {
        &self.text_tokens
    }

    pub fn text_range(&self) -> Range<TokenId> {
        N_SPECIAL as TokenId..(N_SPECIAL + self.text_tokens.len()) as TokenId
    }

    pub fn speech_range(&self) -> Range<TokenId> {
        let start = (N_SPECIAL + self.text_tokens.len()) as TokenId;
        start..start + self.n_speech as TokenId
    }

    pub fn is_text(&self, id: TokenId) -> bool {
        self.text_range().contains(&id)
    }

    /// Text ids plus `<unk>`.
    pub fn is_text_like(&self, id: TokenId) -> bool {
        id == UNK || self.is_text(id)
    }

    pub fn is_speech(&self, id: TokenId) -> bool {
        self.speech_range().contains(&id)
    }

    pub fn text_id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn speech_id(&self, unit: u32) -> Result<TokenId> {
        if (unit as usize) < self.n_speech {
            Ok(self.speech_range().start + unit)
        } else {
            Err(Error::ModalityViolation(format!(
                "speech unit {unit} outside 0..{}",
                self.n_speech
            )))
        }
    }

    pub fn speech_unit(&self, id: TokenId) -> Option<u32> {
        self.is_speech(id).then(|| id - self.speech_range().start)
    }

    pub fn token(&self, id: TokenId) -> Result<Token<'_>> {
        let i = id as usize;
        if i < N_SPECIAL {
            Ok(Token::Special(id))
        } else if self.is_text(id) {
            Ok(Token::Text(&self.text_tokens[i - N_SPECIAL]))
        } else if let Some(u) = self.speech_unit(id) {
            Ok(Token::Speech(u))
        } else {
            Err(Error::UnknownToken(id))
        }
    }

    pub fn id(&self, token: Token<'_>) -> Result<TokenId> {
        match token {
            Token::Special(id) if (id as usize) < N_SPECIAL => Ok(id),
            Token::Special(id) => Err(Error::UnknownToken(id)),
            Token::Text(w) => self
                .text_id(w)
                .ok_or_else(|| Error::invalid(format!("word {w:?} not in vocabulary"))),
            Token::Speech(u) => self.speech_id(u),
        }
    }

    pub fn surface(&self, id: TokenId) -> Result<String> {
        Ok(match self.token(id)? {
            Token::Special(s) => SPECIAL_SURFACES[s as usize].to_string(),
            Token::Text(w) => w.to_string(),
            Token::Speech(u) => format!("<s{u}>"),
        })
    }

    pub fn tokenize_text(&self, sentence: &str) -> Vec<TokenId> {
        sentence
            .split_whitespace()
            .map(|w| self.text_id(w).unwrap_or(UNK))
            .collect()
    }

    pub fn detokenize_text(&self, ids: &[TokenId]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            if id == UNK {
                words.push(UNK_SURFACE);
            } else if self.is_text(id) {
                words.push(&self.text_tokens[id as usize - N_SPECIAL]);
            } else {
                return Err(Error::ModalityViolation(format!(
                    "id {id} is not a text token"
                )));
            }
        }
        Ok(words.join(" "))
    }

    /// Stable fingerprint of the id layout, stored in model checkpoints.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"mmr-vocab\n");
        for s in SPECIAL_SURFACES {
            h.update(s.as_bytes());
            h.update(b"\n");
        }
        for w in &self.text_tokens {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.update((self.n_speech as u64).to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// Lexicon = distinct words of the corpus in first-seen order.
pub fn build_vocabulary<I, S>(text_corpus: I, n_speech: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut words: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut any = false;
    for sentence in text_corpus {
        any = true;
        for w in sentence.as_ref().split_whitespace() {
            if seen.insert(w.to_string()) {
                words.push(w.to_string());
            }
        }
    }
    if !any || words.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Vocabulary::from_lexicon(&words, n_speech)
}

/// Discrete speech units for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioTokenStream {
    pub utt_id: String,
    /// Unit indices in `0..n_speech`.
    pub units: Vec<u32>,
    pub frame_rate_hz: f64,
}

impl AudioTokenStream {
    pub fn new(utt_id: impl Into<String>, units: Vec<u32>) -> Self {
        Self {
            utt_id: utt_id.into(),
            units,
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
        }
    }

    pub fn to_ids(&self, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
        self.units.iter().map(|&u| vocab.speech_id(u)).collect()
    }

    pub fn duration_secs(&self) -> f64 {
        self.units.len() as f64 / self.frame_rate_hz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_from_small_corpus() {
        let v = build_vocabulary(["a b", "b c"], 2).unwrap();
        assert_eq!(v.text_tokens(), ["a", "b", "c"]);
        assert_eq!(v.text_range(), 4..7);
        assert_eq!(v.speech_range(), 7..9);
        assert_eq!(v.size(), 9);
    }

    #[test]
    fn size_counts_specials_text_and_speech() {
        let v = build_vocabulary(["a"], 1).unwrap();
        assert_eq!(v.size(), 6);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let none: [&str; 0] = [];
        assert!(matches!(build_vocabulary(none, 4), Err(Error::EmptyCorpus)));
        assert!(matches!(build_vocabulary(["", "  "], 4), Err(Error::EmptyCorpus)));
        assert!(build_vocabulary(["a"], 0).is_err());
    }

    #[test]
    fn round_trip_over_every_id_of_random_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let corpus: Vec<String> = (0..100)
            .map(|_| {
                let n = rng.random_range(1..8);
                (0..n)
                    .map(|_| format!("w{}", rng.random_range(0..300)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let v = build_vocabulary(&corpus, 16).unwrap();
        for s in &corpus {
            assert!(s.split_whitespace().all(|w| v.text_id(w).is_some()));
        }
        for id in 0..v.size() as TokenId {
            assert_eq!(v.id(v.token(id).unwrap()).unwrap(), id);
        }
        assert!(v.token(v.size() as TokenId).is_err());
    }

    #[test]
    fn tokenize_maps_oov_to_unk() {
        let v = build_vocabulary(["a b"], 1).unwrap();
        let a = v.text_id("a").unwrap();
        let b = v.text_id("b").unwrap();
        assert_eq!(v.tokenize_text("a b"), vec![a, b]);
        assert_eq!(v.tokenize_text("a z"), vec![a, UNK]);
        assert!(v.tokenize_text("").is_empty());
    }

    #[test]
    fn detokenize_rejects_speech_ids() {
        let v = build_vocabulary(["a b"], 2).unwrap();
        assert_eq!(v.detokenize_text(&[]).unwrap(), "");
        assert_eq!(v.detokenize_text(&v.tokenize_text("a b")).unwrap(), "a b");
        let s = v.speech_id(1).unwrap();
        assert!(matches!(
            v.detokenize_text(&[s]),
            Err(Error::ModalityViolation(_))
        ));
        assert!(v.detokenize_text(&[EOS]).is_err());
    }

    #[test]
    fn fingerprint_tracks_layout() {
        let a = build_vocabulary(["a b"], 2).unwrap();
        let b = build_vocabulary(["b a"], 2).unwrap();
        let c = build_vocabulary(["a b"], 3).unwrap();
        assert_eq!(a.fingerprint(), build_vocabulary(["a b"], 2).unwrap().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    proptest! {
        #[test]
        fn tokenize_round_trip(words in prop::collection::vec("[a-f]{1,3}", 0..12)) {
            let v = build_vocabulary(["a b c aa bb cc abc"], 4).unwrap();
            let s = words.join(" ");
            let expected: Vec<&str> = words
                .iter()
                .map(|w| if v.text_id(w).is_some() { w.as_str() } else { UNK_SURFACE })
                .collect();
            prop_assert_eq!(v.detokenize_text(&v.tokenize_text(&s)).unwrap(), expected.join(" "));
        }
    }
}
