//! Sequential vs parallel execution of the batch loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mmrescore::data::{build_pretraining_sequences, generate_synthetic_corpus, SynthConfig};
use mmrescore::experiment::ModelShape;
use mmrescore::lm::{train_differentiable, DifferentiableLM, TinyTransformerLM, TrainConfig};
use mmrescore::mwer::{mwer_grad, MWERConfig};
use mmrescore::parallel::Execution;
use mmrescore::rescore::{corpus_lm_scores, ScoringMode};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let corpus = generate_synthetic_corpus(&SynthConfig {
        n_train: 64,
        n_validation: 0,
        n_test: 16,
        n_unpaired_text: 0,
        n_unpaired_speech: 0,
        ..SynthConfig::default()
    })
    .unwrap();
    let vocab = corpus.vocabulary().unwrap();
    let lm = TinyTransformerLM::new(ModelShape::default().with_vocab(vocab.size()), 0).unwrap();
    let data = build_pretraining_sequences(&corpus.train, &[], &[], &vocab).unwrap();

    let mut g = c.benchmark_group("corpus_lm_scores");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| corpus_lm_scores(&lm, &corpus.test, ScoringMode::SpeechFirst, true, &vocab, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("mwer_grad");
    g.sample_size(10);
    let cfg = MWERConfig::default();
    let mut grad = vec![0.0; lm.num_params()];
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| mwer_grad(&lm, &corpus.train[0], &cfg, &vocab, &mut grad, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("train_steps");
    g.sample_size(10);
    let cfg = TrainConfig { max_steps: 5, batch_size: 16, ..TrainConfig::default() };
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut m = lm.clone();
                train_differentiable(&mut m, &data, &cfg, exec).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
