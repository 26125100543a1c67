//! Corpus file formats, synthetic data and pre-training set assembly.

mod nbest_io;
mod synth;

pub use nbest_io::{read_nbest, write_nbest};
pub use synth::{
    generate_synthetic_corpus, render_frames, unit_prototypes, SynthConfig, SynthCorpus, SynthGrammar,
    SynthLexicon, SynthStats,
};

use crate::error::Result;
use crate::nbest::NBestEntry;
use crate::seqformat::{build_sequence, MultimodalSequence, SequenceFormat};
use crate::vocab::{AudioTokenStream, Vocabulary};

/// Pre-training sequences: every paired utterance yields one TextFirst
/// and one SpeechFirst sequence, unpaired text yields TextOnly and unpaired
/// speech yields SpeechOnly. Paired entries use their reference and audio.
pub fn build_pretraining_sequences(
    paired: &[NBestEntry],
    text: &[String],
    speech: &[AudioTokenStream],
    vocab: &Vocabulary,
) -> Result<Vec<MultimodalSequence>> {
    let mut out = Vec::with_capacity(2 * paired.len() + text.len() + speech.len());
    for e in paired {
        let y = vocab.tokenize_text(e.reference()?);
        let audio = e
            .audio
            .as_ref()
            .ok_or_else(|| crate::Error::MissingAudio(e.utt_id.clone()))?;
        let x = audio.to_ids(vocab)?;
        for f in [SequenceFormat::TextFirst, SequenceFormat::SpeechFirst] {
            out.push(build_sequence(vocab, f, Some(&y), Some(&x))?);
        }
    }
    for t in text {
        out.push(build_sequence(vocab, SequenceFormat::TextOnly, Some(&vocab.tokenize_text(t)), None)?);
    }
    for s in speech {
        out.push(build_sequence(vocab, SequenceFormat::SpeechOnly, None, Some(&s.to_ids(vocab)?))?);
    }
    Ok(out)
}

/// TextOnly sequences for a text-only language model.
pub fn text_sequences<'a, I>(sentences: I, vocab: &Vocabulary) -> Result<Vec<MultimodalSequence>>
where
    I: IntoIterator<Item = &'a str>,
{
    sentences
        .into_iter()
        .map(|t| build_sequence(vocab, SequenceFormat::TextOnly, Some(&vocab.tokenize_text(t)), None))
        .collect()
}

/// SpeechOnly sequences.
pub fn speech_sequences(streams: &[AudioTokenStream], vocab: &Vocabulary) -> Result<Vec<MultimodalSequence>> {
    streams
        .iter()
        .map(|s| build_sequence(vocab, SequenceFormat::SpeechOnly, None, Some(&s.to_ids(vocab)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbest::Hypothesis;
    use crate::seqformat::Modality;
    use crate::vocab::build_vocabulary;

    #[test]
    fn one_of_each_gives_four_sequences() {
        let v = build_vocabulary(["a b c"], 8).unwrap();
        let paired = NBestEntry {
            utt_id: "p".into(),
            audio: Some(AudioTokenStream::new("p", vec![1, 2, 3])),
            reference: Some("a b".into()),
            hypotheses: vec![Hypothesis::new("a b", 0.0)],
        };
        let seqs = build_pretraining_sequences(
            &[paired],
            &["c a".to_string()],
            &[AudioTokenStream::new("s", vec![7, 0])],
            &v,
        )
        .unwrap();
        let formats: Vec<_> = seqs.iter().map(|s| s.format).collect();
        assert_eq!(
            formats,
            vec![
                SequenceFormat::TextFirst,
                SequenceFormat::SpeechFirst,
                SequenceFormat::TextOnly,
                SequenceFormat::SpeechOnly
            ]
        );
        for m in [Modality::Text, Modality::Speech] {
            assert_eq!(seqs[0].payload(m).unwrap(), seqs[1].payload(m).unwrap());
        }
    }

    #[test]
    fn out_of_range_units_are_rejected() {
        let v = build_vocabulary(["a"], 2).unwrap();
        assert!(speech_sequences(&[AudioTokenStream::new("s", vec![5])], &v).is_err());
    }

    #[test]
    fn synthetic_corpus_sequences_validate() {
        let cfg = SynthConfig {
            n_train: 40,
            n_validation: 5,
            n_test: 5,
            n_unpaired_text: 10,
            n_unpaired_speech: 10,
            ..SynthConfig::default()
        };
        let c = generate_synthetic_corpus(&cfg).unwrap();
        let v = c.vocabulary().unwrap();
        let seqs = build_pretraining_sequences(&c.train, &c.unpaired_text, &c.unpaired_speech, &v).unwrap();
        assert_eq!(seqs.len(), 2 * 40 + 10 + 10);
        for s in &seqs {
            s.validate(&v).unwrap();
        }
    }
}
