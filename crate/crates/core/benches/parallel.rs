//! Compares the rayon-backed and sequential execution paths on the two
//! hot inner loops: batched training passes and the storage grid search.
//!
//! Run with `cargo bench -p gale-core` (the `parallel` feature is
//! required and on by default).

use criterion::{criterion_group, criterion_main, Criterion};
use gale_core::cove::{CoveConfig, CoveTrainer};
use gale_core::econ::{FarmSpec, StorageCatalog, StorageSpec};
use gale_core::exec;
use gale_core::series::{synth_dataset, SynthConfig};
use gale_core::tuner::{storage_grid_search, StorageSearchSpace};
use std::hint::black_box;

fn farm() -> FarmSpec {
    FarmSpec { capacity_mw: 250.0, capex_usd: 3.75e8, opex_usd_per_yr: 1.0e7, fcr: 0.07 }
}

fn bench_exec_paths(c: &mut Criterion) {
    // A stand-in for per-window work: a few thousand flops per item.
    let items: Vec<f64> = (0..256).map(|i| i as f64 * 0.01).collect();
    let work = |x: &f64| -> f64 {
        let mut acc = *x;
        for k in 1..2000 {
            acc = (acc + 1.0 / k as f64).sin();
        }
        acc
    };
    let mut group = c.benchmark_group("exec_map");
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(exec::map_collect(black_box(&items), work)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(exec::map_collect_seq(black_box(&items), work)))
    });
    group.finish();
}

fn bench_grid_search(c: &mut Criterion) {
    let farm = farm();
    let frame = synth_dataset(1, 7, &farm, &SynthConfig::default()).unwrap();
    let catalog = StorageCatalog::builtin();
    let space = StorageSearchSpace::standard();
    let mut group = c.benchmark_group("storage_grid_search");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| storage_grid_search(black_box(&frame), &farm, &catalog, &space).unwrap())
    });
    group.bench_function("sequential_single_candidate_x62", |b| {
        // Sequential reference: run the same 62 candidates one at a time.
        b.iter(|| {
            for (tech, rating, duration) in &space.candidates {
                let single = StorageSearchSpace::single(tech, *rating, *duration);
                storage_grid_search(black_box(&frame), &farm, &catalog, &single).unwrap();
            }
        })
    });
    group.finish();
}

fn bench_training_epoch(c: &mut Criterion) {
    let farm = farm();
    let frame = synth_dataset(1, 3, &farm, &SynthConfig::default()).unwrap();
    let (train, valid) = frame.split_train_test(0.7).unwrap();
    let storage = StorageSpec::new("bench", 100.0, 4.0, 0.8, 1.0e8, 2.0e6).unwrap();
    let config = CoveConfig { epochs: 1, hidden: 16, ff_widths: (64, 32), seq_len: 168, ..Default::default() };
    let mut group = c.benchmark_group("cove_epoch");
    group.sample_size(10);
    group.bench_function("one_epoch", |b| {
        b.iter(|| {
            let mut trainer =
                CoveTrainer::new(config.clone(), farm, storage.clone(), &train).unwrap();
            trainer.run(&train, &valid).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_exec_paths, bench_grid_search, bench_training_epoch);
criterion_main!(benches);
