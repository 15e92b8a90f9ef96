use char2subword::evaluation::{precision_at_k, TableLookup};
use char2subword::model::{backward, forward, Char2Subword, ModelConfig};
use char2subword::objectives::{combined_loss_gradient, LossWeights, NeighborIndex};
use char2subword::toy::{toy_table, toy_vocabulary};
use char2subword::{CharAlphabet, Exec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

const MODES: [Exec; 2] = [Exec::Sequential, Exec::Parallel];

fn batch_gradient(c: &mut Criterion) {
    let vocab = toy_vocabulary(200, 0);
    let table = toy_table(200, 32, 0);
    let model = Char2Subword::new(ModelConfig::toy(32), CharAlphabet::from_vocabulary(&vocab), 0).unwrap();
    let index = NeighborIndex::build(&table, 5, Exec::Parallel).unwrap();
    let weights = LossWeights::default();
    let batch: Vec<(usize, _)> = vocab
        .ordinary_ids()
        .into_iter()
        .take(64)
        .map(|id| (id, model.encode(vocab.token(id).unwrap(), false)))
        .collect();
    let mut group = c.benchmark_group("batch_gradient");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                exec.map(&batch, |(id, seq)| {
                    let out = forward(&model.params, seq).unwrap();
                    let (_, up) =
                        combined_loss_gradient(*id, table.row(*id), &out.embedding, &table, &index, &weights)
                            .unwrap();
                    backward(&model.params, seq, &out.cache, &up).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn neighbor_index(c: &mut Criterion) {
    let table = toy_table(2000, 64, 1);
    let mut group = c.benchmark_group("neighbor_index");
    group.sample_size(10);
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| NeighborIndex::build(black_box(&table), 15, exec).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let vocab = toy_vocabulary(1000, 2);
    let table = toy_table(1000, 64, 2);
    let index = NeighborIndex::build(&table, 15, Exec::Parallel).unwrap();
    let oracle = TableLookup { vocab: &vocab, table: &table };
    let mut group = c.benchmark_group("precision_at_k");
    group.sample_size(10);
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| precision_at_k(&oracle, &vocab, &table, &index, 15, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradient, neighbor_index, evaluation);
criterion_main!(benches);
