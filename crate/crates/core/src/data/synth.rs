//! Seeded synthetic corpus with partly audio-resolvable first-pass errors.
//!
//! Sentences come from a class bigram grammar. A homophone pair forms one
//! class and its two words are drawn with equal probability, so text
//! statistics cannot tell them apart. Every word has a fixed three-unit
//! audio signature whose first unit is unique to the word, so the audio does.
//!
//! Hypotheses are references corrupted by independent per-word deletions,
//! substitutions and insertions. A substitution of a word that has a partner
//! picks the partner with a probability calibrated so that the requested
//! fraction of all substitutions are homophone swaps. First-pass scores are
//! `-edit_distance + N(0, σ²)` and lists are sorted by that score.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::word_edit_distance;
use crate::nbest::{Hypothesis, NBestEntry};
use crate::vocab::{AudioTokenStream, Vocabulary};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const SIGNATURE_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub n_unpaired_text: usize,
    pub n_unpaired_speech: usize,
    /// Inclusive range of reference lengths in words.
    pub words_per_utterance: (usize, usize),
    pub lexicon_size: usize,
    pub homophone_pairs: usize,
    pub n_speech_units: usize,
    /// Successor classes per grammar class.
    pub successors: usize,
    pub n_best: usize,
    pub sub_rate: f64,
    pub ins_rate: f64,
    pub del_rate: f64,
    /// Target share of substitutions that swap a word for its homophone.
    pub homophone_fraction: f64,
    /// Per-unit probability of replacing an audio unit with a random one.
    pub audio_noise: f64,
    /// Standard deviation of the first-pass score jitter.
    pub am_score_noise: f64,
    /// `Some(p)`: the reference is in the list with probability `p` and
    /// otherwise excluded. `None`: it appears only if sampled.
    pub reference_in_nbest: Option<f64>,
    /// Prefix of every utterance id.
    pub domain: String,
    /// Seeds the word forms and audio signatures.
    pub lexicon_seed: u64,
    /// Seeds the grammar.
    pub grammar_seed: u64,
    /// Seeds sentence, audio and hypothesis sampling.
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 5000,
            n_validation: 500,
            n_test: 500,
            n_unpaired_text: 2000,
            n_unpaired_speech: 2000,
            words_per_utterance: (3, 6),
            lexicon_size: 40,
            homophone_pairs: 12,
            n_speech_units: 64,
            successors: 4,
            n_best: 10,
            sub_rate: 0.12,
            ins_rate: 0.02,
            del_rate: 0.02,
            homophone_fraction: 0.4,
            audio_noise: 0.3,
            am_score_noise: 1.0,
            reference_in_nbest: Some(0.8),
            domain: "syn".into(),
            lexicon_seed: 1,
            grammar_seed: 2,
            seed: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("sub_rate", self.sub_rate),
            ("ins_rate", self.ins_rate),
            ("del_rate", self.del_rate),
            ("homophone_fraction", self.homophone_fraction),
            ("audio_noise", self.audio_noise),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        if self.sub_rate + self.del_rate > 1.0 {
            return Err(Error::invalid("sub_rate + del_rate must not exceed 1"));
        }
        if let Some(p) = self.reference_in_nbest {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("reference_in_nbest must be in [0, 1]"));
            }
        }
        if !(self.am_score_noise >= 0.0) || !self.am_score_noise.is_finite() {
            return Err(Error::invalid("am_score_noise must be finite and >= 0"));
        }
        if self.n_best == 0 {
            return Err(Error::invalid("n_best must be at least 1"));
        }
        let (lo, hi) = self.words_per_utterance;
        if lo == 0 || lo > hi {
            return Err(Error::invalid("words_per_utterance must be a nonempty range starting at 1 or more"));
        }
        if self.lexicon_size < 2 || self.lexicon_size < 2 * self.homophone_pairs {
            return Err(Error::invalid("lexicon_size must be >= 2 and >= 2 * homophone_pairs"));
        }
        if self.lexicon_size > self.n_speech_units {
            return Err(Error::invalid("every word needs its own leading audio unit: lexicon_size <= n_speech_units"));
        }
        if self.lexicon_size > CONSONANTS.len() * VOWELS.len() * CONSONANTS.len() * VOWELS.len() {
            return Err(Error::invalid("lexicon_size too large"));
        }
        let classes = self.lexicon_size - self.homophone_pairs;
        if self.successors == 0 || self.successors > classes {
            return Err(Error::invalid(format!("successors must be in 1..={classes}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthLexicon {
    pub words: Vec<String>,
    /// Homophone partner of each word. Words `2k` and `2k + 1` are partners
    /// for `k < homophone_pairs`.
    pub partner: Vec<Option<usize>>,
    pub signatures: Vec<[u32; SIGNATURE_LEN]>,
}

impl SynthLexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.lexicon_seed);
        let syllables: Vec<String> = CONSONANTS
            .iter()
            .flat_map(|&c| VOWELS.iter().map(move |&v| format!("{}{}", c as char, v as char)))
            .collect();
        let mut forms: Vec<String> = syllables
            .iter()
            .flat_map(|a| syllables.iter().map(move |b| format!("{a}{b}")))
            .collect();
        forms.shuffle(&mut rng);
        forms.truncate(cfg.lexicon_size);

        let mut leads: Vec<u32> = (0..cfg.n_speech_units as u32).collect();
        leads.shuffle(&mut rng);
        let signatures = (0..cfg.lexicon_size)
            .map(|i| {
                let mut s = [leads[i]; SIGNATURE_LEN];
                for u in &mut s[1..] {
                    *u = rng.random_range(0..cfg.n_speech_units as u32);
                }
                s
            })
            .collect();
        let partner = (0..cfg.lexicon_size)
            .map(|i| (i < 2 * cfg.homophone_pairs).then_some(i ^ 1))
            .collect();
        Self {
            words: forms,
            partner,
            signatures,
        }
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn are_homophones(&self, a: &str, b: &str) -> bool {
        match (self.index(a), self.index(b)) {
            (Some(i), Some(j)) => self.partner[i] == Some(j),
            _ => false,
        }
    }
}

/// Class bigram grammar. Class `k < homophone_pairs` holds words `2k` and
/// `2k + 1`; the remaining classes hold one word each.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthGrammar {
    pub class_words: Vec<Vec<usize>>,
    pub successors: Vec<Vec<usize>>,
}

impl SynthGrammar {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.grammar_seed);
        let pairs = cfg.homophone_pairs;
        let class_words: Vec<Vec<usize>> = (0..pairs)
            .map(|k| vec![2 * k, 2 * k + 1])
            .chain((2 * pairs..cfg.lexicon_size).map(|w| vec![w]))
            .collect();
        let n = class_words.len();
        let successors = (0..n)
            .map(|_| {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                all.truncate(cfg.successors);
                all
            })
            .collect();
        Self {
            class_words,
            successors,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
        let mut class = rng.random_range(0..self.class_words.len());
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            if i > 0 {
                let succ = &self.successors[class];
                class = succ[rng.random_range(0..succ.len())];
            }
            let words = &self.class_words[class];
            out.push(words[rng.random_range(0..words.len())]);
        }
        out
    }
}

/// Corruption counts over the emitted (non-reference) hypotheses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SynthStats {
    pub substitutions: usize,
    pub homophone_substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl SynthStats {
    pub fn homophone_share(&self) -> f64 {
        self.homophone_substitutions as f64 / self.substitutions.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub lexicon: SynthLexicon,
    pub grammar: SynthGrammar,
    pub train: Vec<NBestEntry>,
    pub validation: Vec<NBestEntry>,
    pub test: Vec<NBestEntry>,
    pub unpaired_text: Vec<String>,
    pub unpaired_speech: Vec<AudioTokenStream>,
    pub stats: SynthStats,
}

impl SynthCorpus {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_lexicon(&self.lexicon.words, self.config.n_speech_units)
    }
}

struct Sampler<'a> {
    cfg: &'a SynthConfig,
    lexicon: &'a SynthLexicon,
    grammar: &'a SynthGrammar,
    /// Probability that a substitution of a word with a partner is a
    /// homophone swap.
    swap_prob: f64,
    jitter: Normal<f64>,
}

struct Corruption {
    words: Vec<usize>,
    stats: SynthStats,
}

impl Sampler<'_> {
    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let (lo, hi) = self.cfg.words_per_utterance;
        let len = rng.random_range(lo..=hi);
        self.grammar.sample(rng, len)
    }

    fn text(&self, words: &[usize]) -> String {
        words
            .iter()
            .map(|&w| self.lexicon.words[w].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn audio(&self, rng: &mut ChaCha8Rng, words: &[usize]) -> Vec<u32> {
        let units = self.cfg.n_speech_units as u32;
        words
            .iter()
            .flat_map(|&w| self.lexicon.signatures[w])
            .map(|u| {
                if rng.random::<f64>() < self.cfg.audio_noise {
                    rng.random_range(0..units)
                } else {
                    u
                }
            })
            .collect()
    }

    fn random_other(&self, rng: &mut ChaCha8Rng, w: usize) -> usize {
        let n = self.lexicon.words.len();
        let excluded = |c: usize| c == w || Some(c) == self.lexicon.partner[w];
        if (0..n).all(excluded) {
            return w;
        }
        loop {
            let c = rng.random_range(0..n);
            if !excluded(c) {
                return c;
            }
        }
    }

    fn corrupt(&self, rng: &mut ChaCha8Rng, reference: &[usize]) -> Corruption {
        let n = self.lexicon.words.len();
        let mut stats = SynthStats::default();
        let mut words = Vec::with_capacity(reference.len() + 2);
        for &w in reference {
            let r: f64 = rng.random();
            if r < self.cfg.del_rate {
                stats.deletions += 1;
            } else if r < self.cfg.del_rate + self.cfg.sub_rate {
                let swap = self.lexicon.partner[w].filter(|_| rng.random::<f64>() < self.swap_prob);
                let s = match swap {
                    Some(p) => {
                        stats.homophone_substitutions += 1;
                        p
                    }
                    None => self.random_other(rng, w),
                };
                if s != w {
                    stats.substitutions += 1;
                }
                words.push(s);
            } else {
                words.push(w);
            }
            if rng.random::<f64>() < self.cfg.ins_rate {
                words.push(rng.random_range(0..n));
                stats.insertions += 1;
            }
        }
        Corruption { words, stats }
    }

    fn entry(&self, rng: &mut ChaCha8Rng, utt_id: String, stats: &mut SynthStats) -> NBestEntry {
        let reference = self.sentence(rng);
        let audio = self.audio(rng, &reference);
        let include = self.cfg.reference_in_nbest.map(|p| rng.random::<f64>() < p);
        let mut lists: Vec<Vec<usize>> = Vec::with_capacity(self.cfg.n_best);
        let mut kept = SynthStats::default();
        if include == Some(true) {
            lists.push(reference.clone());
        }
        let max_attempts = 200 * self.cfg.n_best;
        for _ in 0..max_attempts {
            if lists.len() >= self.cfg.n_best {
                break;
            }
            let c = self.corrupt(rng, &reference);
            let is_ref = c.words == reference;
            if (is_ref && include == Some(false)) || lists.contains(&c.words) {
                continue;
            }
            if !is_ref {
                kept.substitutions += c.stats.substitutions;
                kept.homophone_substitutions += c.stats.homophone_substitutions;
                kept.insertions += c.stats.insertions;
                kept.deletions += c.stats.deletions;
            }
            lists.push(c.words);
        }
        if lists.is_empty() {
            lists.push(reference.clone());
        }
        stats.substitutions += kept.substitutions;
        stats.homophone_substitutions += kept.homophone_substitutions;
        stats.insertions += kept.insertions;
        stats.deletions += kept.deletions;

        let reference_text = self.text(&reference);
        let mut hypotheses: Vec<Hypothesis> = lists
            .iter()
            .map(|h| {
                let text = self.text(h);
                let d = word_edit_distance(&text, &reference_text).distance as f64;
                let score = -d + self.jitter.sample(rng);
                Hypothesis::new(text, score)
            })
            .collect();
        hypotheses.sort_by(|a, b| b.am_logprob.total_cmp(&a.am_logprob));
        NBestEntry {
            audio: Some(AudioTokenStream::new(utt_id.clone(), audio)),
            utt_id,
            reference: Some(reference_text),
            hypotheses,
        }
    }
}

/// Share of reference tokens whose word has a homophone partner, estimated
/// from a fixed number of grammar samples.
fn partner_token_share(grammar: &SynthGrammar, lexicon: &SynthLexicon, cfg: &SynthConfig) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.grammar_seed);
    rng.set_stream(u64::MAX);
    let (lo, hi) = cfg.words_per_utterance;
    let (mut with, mut total) = (0usize, 0usize);
    for _ in 0..4000 {
        let len = rng.random_range(lo..=hi);
        for w in grammar.sample(&mut rng, len) {
            with += usize::from(lexicon.partner[w].is_some());
            total += 1;
        }
    }
    with as f64 / total as f64
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let lexicon = SynthLexicon::new(cfg);
    let grammar = SynthGrammar::new(cfg);
    let share = partner_token_share(&grammar, &lexicon, cfg);
    let swap_prob = if share > 0.0 {
        (cfg.homophone_fraction / share).min(1.0)
    } else {
        0.0
    };
    let sampler = Sampler {
        cfg,
        lexicon: &lexicon,
        grammar: &grammar,
        swap_prob,
        jitter: Normal::new(0.0, cfg.am_score_noise).map_err(|e| Error::invalid(e.to_string()))?,
    };
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(k);
        r
    };
    let mut stats = SynthStats::default();
    let split = |name: &str, n: usize, k: u64, stats: &mut SynthStats| {
        let mut rng = stream(k);
        (0..n)
            .map(|i| sampler.entry(&mut rng, format!("{}-{name}-{i:06}", cfg.domain), stats))
            .collect::<Vec<_>>()
    };
    let train = split("train", cfg.n_train, 0, &mut stats);
    let validation = split("dev", cfg.n_validation, 1, &mut stats);
    let test = split("test", cfg.n_test, 2, &mut stats);

    let mut rng = stream(3);
    let unpaired_text = (0..cfg.n_unpaired_text)
        .map(|_| sampler.text(&sampler.sentence(&mut rng)))
        .collect();
    let mut rng = stream(4);
    let unpaired_speech = (0..cfg.n_unpaired_speech)
        .map(|i| {
            let s = sampler.sentence(&mut rng);
            AudioTokenStream::new(format!("{}-speech-{i:06}", cfg.domain), sampler.audio(&mut rng, &s))
        })
        .collect();

    Ok(SynthCorpus {
        config: cfg.clone(),
        lexicon,
        grammar,
        train,
        validation,
        test,
        unpaired_text,
        unpaired_speech,
        stats,
    })
}

/// One Gaussian prototype vector per speech unit.
pub fn unit_prototypes(n_units: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n_units)
        .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

/// Frames for a unit stream: prototype plus isotropic noise of std `spread`.
pub fn render_frames(units: &[u32], prototypes: &[Vec<f64>], spread: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let normal = Normal::new(0.0, spread).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units
        .iter()
        .map(|&u| {
            let p = prototypes
                .get(u as usize)
                .ok_or_else(|| Error::invalid(format!("unit {u} has no prototype")))?;
            Ok(p.iter().map(|x| x + normal.sample(&mut rng)).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{corpus_wer, oracle_wer};

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 30,
            n_validation: 10,
            n_test: 10,
            n_unpaired_text: 5,
            n_unpaired_speech: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        assert_eq!(generate_synthetic_corpus(&small()).unwrap(), generate_synthetic_corpus(&small()).unwrap());
        let other = SynthConfig { seed: 99, ..small() };
        assert_ne!(generate_synthetic_corpus(&small()).unwrap().train, generate_synthetic_corpus(&other).unwrap().train);
    }

    #[test]
    fn entries_are_well_formed_and_ids_disjoint() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        let mut ids = std::collections::HashSet::new();
        for e in c.train.iter().chain(&c.validation).chain(&c.test) {
            e.validate(c.config.n_best).unwrap();
            assert!(ids.insert(e.utt_id.clone()));
            assert!(e.hypotheses.windows(2).all(|w| w[0].am_logprob >= w[1].am_logprob));
            let audio = e.audio.as_ref().unwrap();
            assert_eq!(audio.units.len(), 3 * e.reference().unwrap().split(' ').count());
        }
        assert!(c.unpaired_speech.iter().all(|s| ids.insert(s.utt_id.clone())));
    }

    #[test]
    fn homophones_share_contexts_but_not_audio() {
        let c = generate_synthetic_corpus(&small()).unwrap();
        for k in 0..c.config.homophone_pairs {
            assert_eq!(c.grammar.class_words[k], vec![2 * k, 2 * k + 1]);
            assert_ne!(c.lexicon.signatures[2 * k][0], c.lexicon.signatures[2 * k + 1][0]);
            assert!(c.lexicon.are_homophones(&c.lexicon.words[2 * k], &c.lexicon.words[2 * k + 1]));
        }
        let leads: std::collections::HashSet<u32> = c.lexicon.signatures.iter().map(|s| s[0]).collect();
        assert_eq!(leads.len(), c.config.lexicon_size);
    }

    #[test]
    fn zero_error_rates_give_perfect_lists() {
        let cfg = SynthConfig {
            sub_rate: 0.0,
            ins_rate: 0.0,
            del_rate: 0.0,
            reference_in_nbest: None,
            ..small()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        for e in &c.test {
            assert!(e.hypotheses.iter().all(|h| Some(&h.text) == e.reference.as_ref()));
        }
        assert_eq!(oracle_wer(&c.test).unwrap().wer, 0.0);
        let top1 = c.test.iter().map(|e| (e.utt_id.as_str(), e.hypotheses[0].text.as_str(), e.reference.as_deref().unwrap()));
        assert_eq!(corpus_wer(top1).unwrap().wer, 0.0);
    }

    #[test]
    fn single_best_wer_matches_the_substitution_rate() {
        let cfg = SynthConfig {
            n_train: 0,
            n_validation: 0,
            n_test: 2300,
            n_best: 1,
            sub_rate: 0.1,
            ins_rate: 0.0,
            del_rate: 0.0,
            reference_in_nbest: None,
            ..small()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        let words: usize = c.test.iter().map(|e| e.reference().unwrap().split(' ').count()).sum();
        assert!(words >= 10_000, "{words}");
        let top1 = c.test.iter().map(|e| (e.utt_id.as_str(), e.hypotheses[0].text.as_str(), e.reference.as_deref().unwrap()));
        let wer = corpus_wer(top1).unwrap().wer;
        assert!((wer - 0.10).abs() <= 0.01, "{wer}");
    }

    #[test]
    fn homophone_share_is_calibrated() {
        let cfg = SynthConfig {
            n_train: 0,
            n_validation: 0,
            n_test: 2000,
            n_best: 1,
            sub_rate: 0.2,
            ins_rate: 0.0,
            del_rate: 0.0,
            homophone_fraction: 0.3,
            reference_in_nbest: None,
            ..small()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        // Count from the emitted text: with no insertions or deletions the
        // hypothesis aligns position by position with its reference.
        let (mut subs, mut homo) = (0usize, 0usize);
        for e in &c.test {
            let r: Vec<&str> = e.reference().unwrap().split(' ').collect();
            let h: Vec<&str> = e.hypotheses[0].text.split(' ').collect();
            assert_eq!(r.len(), h.len());
            for (a, b) in r.iter().zip(&h) {
                if a != b {
                    subs += 1;
                    homo += usize::from(c.lexicon.are_homophones(a, b));
                }
            }
        }
        assert_eq!(subs, c.stats.substitutions);
        let share = homo as f64 / subs as f64;
        assert!((share - 0.3).abs() <= 0.03, "{share}");
    }

    #[test]
    fn reference_inclusion_is_honoured() {
        let always = SynthConfig {
            reference_in_nbest: Some(1.0),
            ..small()
        };
        let c = generate_synthetic_corpus(&always).unwrap();
        assert_eq!(oracle_wer(&c.test).unwrap().wer, 0.0);
        let never = SynthConfig {
            reference_in_nbest: Some(0.0),
            ..small()
        };
        let c = generate_synthetic_corpus(&never).unwrap();
        for e in &c.test {
            assert!(e.hypotheses.iter().all(|h| Some(&h.text) != e.reference.as_ref()));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            SynthConfig { sub_rate: 1.5, ..small() },
            SynthConfig { n_best: 0, ..small() },
            SynthConfig { homophone_pairs: 30, ..small() },
            SynthConfig { lexicon_size: 100, ..small() },
            SynthConfig { words_per_utterance: (4, 2), ..small() },
            SynthConfig { am_score_noise: f64::NAN, ..small() },
        ] {
            assert!(generate_synthetic_corpus(&bad).is_err());
        }
    }

    #[test]
    fn frames_cluster_around_prototypes() {
        let protos = unit_prototypes(4, 3, 7);
        let frames = render_frames(&[0, 3, 3], &protos, 0.0, 1).unwrap();
        assert_eq!(frames[1], protos[3]);
        assert!(render_frames(&[9], &protos, 0.1, 1).is_err());
    }
}
