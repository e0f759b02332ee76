//! Sequential versus rayon-parallel execution of the two data-parallel hot
//! loops: per-sentence gradients of a batch, and the exhaustive oracle sweep.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::hint::black_box;

use unified_ner::corpus::{partialize, PartitionPlan};
use unified_ner::encoder::{EncoderDims, Vocab};
use unified_ner::lattice::oracle::brute_force;
use unified_ner::lattice::{log_partition, Lattice, MaskConfig, PartialAnnotation};
use unified_ner::model::{Example, Model};
use unified_ner::par;
use unified_ner::synthetic::{SyntheticGenerator, SyntheticSpec};
use unified_ner::training::global_space;

fn batch() -> (Model, Vec<Example>) {
    let mut g = SyntheticGenerator::new(SyntheticSpec::default(), 1).unwrap();
    let (corpus, _) = g.corpus("bench", 64);
    let parts = partialize(&corpus, &PartitionPlan::RandomByType { parts: 4 }, 0).unwrap();
    let space = global_space(&parts).unwrap();
    let vocab = Vocab::build(corpus.sentences.iter().flat_map(|s| s.words()));
    let model = Model::unified(vocab, space.clone(), EncoderDims::default(), &mut ChaCha8Rng::seed_from_u64(0));
    let examples = parts
        .iter()
        .flat_map(|p| {
            let mask = space.annotation_mask(&p.schema).unwrap();
            p.sentences.iter().map(move |s| (s.clone(), mask.clone())).collect::<Vec<_>>()
        })
        .map(|(s, mask)| model.example(&s, 0, &mask).unwrap())
        .collect();
    (model, examples)
}

fn gradients(c: &mut Criterion) {
    let (model, examples) = batch();
    let mut group = c.benchmark_group("batch_gradients");
    let grad = |ex: &Example| model.loss_and_grads(ex, 0.0, 1.0).unwrap().0;
    group.bench_function(BenchmarkId::new("sequential", examples.len()), |b| {
        b.iter(|| black_box(par::map_seq(&examples, grad)))
    });
    group.bench_function(BenchmarkId::new("parallel", examples.len()), |b| {
        b.iter(|| black_box(par::map(&examples, grad)))
    });
    group.finish();
}

fn random_case(seed: u64) -> (Lattice, MaskConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, l) = (5, 5);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let emissions = (0..t * l).map(|_| normal(&mut rng)).collect();
    let transitions = (0..(l + 1) * (l + 1)).map(|_| normal(&mut rng)).collect();
    let lattice = Lattice::new(l, emissions, transitions).unwrap();
    let gold: Vec<usize> = (0..t).map(|_| rng.gen_range(0..l)).collect();
    let mut annotation = PartialAnnotation::exact(l, gold.clone());
    for (i, a) in annotation.alternative.iter_mut().enumerate() {
        *a = gold[i / l] != i % l && rng.gen_bool(0.3);
    }
    (lattice, MaskConfig::new(0.3, 0.7, annotation).unwrap())
}

fn oracle_sweep(c: &mut Criterion) {
    let cases: Vec<_> = (0..64).map(random_case).collect();
    let check = |(lattice, mask): &(Lattice, MaskConfig)| {
        let dp = log_partition(lattice, mask).unwrap();
        let bf = brute_force(lattice, Some(mask)).unwrap().log_partition;
        (dp - bf).abs()
    };
    let mut group = c.benchmark_group("oracle_sweep");
    group.bench_function(BenchmarkId::new("sequential", cases.len()), |b| {
        b.iter(|| black_box(par::map_seq(&cases, check)))
    });
    group.bench_function(BenchmarkId::new("parallel", cases.len()), |b| {
        b.iter(|| black_box(par::map(&cases, check)))
    });
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gradients, oracle_sweep
}
criterion_main!(benches);
