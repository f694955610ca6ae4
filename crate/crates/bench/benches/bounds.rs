use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use panelbounds::bounds::{default_delta_grid, dott_bounds_worst_case};
use panelbounds::cic::cic_counterfactual;
use panelbounds::inference::{resample_indices, BoundsMap};
use panelbounds::pipeline::{estimate_bounds, DottMap, DottVariant};
use panelbounds::StepCdf;
use panelbounds_bench::{options, panel};

fn first_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("first_step");
    for n in [2_000, 10_000] {
        let data = panel(n);
        let (t, ctl) = data.split_by_group();
        let (a, b, d) = (t.y_tm1(), ctl.y_tm1(), ctl.y_t());
        g.bench_with_input(BenchmarkId::new("cic_counterfactual", n), &n, |bch, _| {
            bch.iter(|| cic_counterfactual(black_box(&a), &b, &d).unwrap())
        });
        let f1 = StepCdf::from_sample(&t.y_t()).unwrap();
        let f0 = cic_counterfactual(&a, &b, &d).unwrap();
        let grid = default_delta_grid(&f1, &f0, 201);
        g.bench_with_input(BenchmarkId::new("makarov_worst_case", n), &n, |bch, _| {
            bch.iter(|| dott_bounds_worst_case(black_box(&f1), &f0, &grid).unwrap())
        });
    }
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    let data = panel(2_000);
    g.bench_function("estimate_bounds_2000", |b| b.iter(|| estimate_bounds(black_box(&data), &options()).unwrap()));
    let map = DottMap::new(DottVariant::Csa, options(), vec![0.0, 1.0, 2.0]).unwrap();
    let base = map.estimate(&data).unwrap();
    let (idx, _) = resample_indices(&data, 7, 0);
    g.bench_function("csa_bootstrap_replicate_2000", |b| {
        b.iter(|| map.evaluate(&map.replicate(black_box(&data), &idx, &base).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, first_step, pipeline);
criterion_main!(benches);
