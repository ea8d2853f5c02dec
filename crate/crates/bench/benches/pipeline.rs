use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use tq_bench::bench_fixture;
use tq_core::covariance::{gradient_covariance, weight_covariance, Axis, GradConfig};
use tq_core::quant::{quantize, QuantParams};
use tq_core::rdopt::{delta_grid, prepare, CurveConfig, DistortionProbe, SweepConfig, TransformedLayer};
use tq_core::rdopt::{step_size_search, Section, Unit};
use tq_core::theory::{monte_carlo_distortion, McConfig, SyntheticSource};
use tq_core::transform::{elt, klt, TransformKind, TransformPlan};

fn bench_quantizer(c: &mut Criterion) {
    let mut rng = tq_core::rng::seeded(1);
    use rand::Rng as _;
    let values: Vec<f64> = (0..65_536).map(|_| rng.random_range(-4.0..4.0)).collect();
    let p = QuantParams::new(8, 0.03125).unwrap();
    let mut g = c.benchmark_group("quantizer");
    g.throughput(Throughput::Elements(values.len() as u64));
    g.bench_function("quantize_64k", |b| b.iter(|| quantize(black_box(&values), p)));
    g.finish();
}

fn bench_transforms(c: &mut Criterion) {
    let (net, calib) = bench_fixture();
    let layer = net.layer(1);
    let ct = weight_covariance(layer, Axis::Row);
    let cg = gradient_covariance(&net, 1, &calib, Axis::Row, &GradConfig::default()).unwrap();
    let mut g = c.benchmark_group("transforms");
    g.bench_function("klt_12ch", |b| b.iter(|| klt(black_box(&ct), Axis::Row).unwrap()));
    g.bench_function("elt_12ch", |b| {
        b.iter(|| elt(black_box(&ct), black_box(&cg), Axis::Row).unwrap())
    });
    g.bench_function("gradient_covariance_12ch", |b| {
        b.iter(|| gradient_covariance(&net, 1, &calib, Axis::Row, &GradConfig::default()).unwrap())
    });
    g.finish();
}

fn bench_step_search(c: &mut Criterion) {
    let (net, calib) = bench_fixture();
    let probe = DistortionProbe::new(&net, 1, &calib).unwrap();
    let ct = weight_covariance(net.layer(1), Axis::Row);
    let plan = klt(&ct, Axis::Row).unwrap();
    let tl = TransformedLayer::new(net.layer(1), &plan).unwrap();
    let unit = Unit { section: Section::Transform, start: 0, len: 1 };
    let grid = delta_grid(tl.t.row(0).amax(), 6, Some(8));
    c.bench_function("step_size_search_r6", |b| {
        b.iter(|| step_size_search(&probe, &tl, unit, 6, black_box(&grid)).unwrap())
    });
}

fn bench_prepare(c: &mut Criterion) {
    let (net, calib) = bench_fixture();
    let mut cfg = SweepConfig::new(TransformKind::Klt, Axis::Row);
    cfg.curve = CurveConfig { blocks: 4, max_bits: 4, steps: Some(6) };
    c.bench_function("prepare_small_curves", |b| {
        b.iter(|| prepare(black_box(&net), black_box(&calib), &cfg).unwrap())
    });
}

fn bench_monte_carlo(c: &mut Criterion) {
    let src = SyntheticSource::ar1(4, 0.8, 0.5, 2).unwrap();
    let plan = TransformPlan::identity(4, Axis::Column);
    let cfg = McConfig { trials: 10_000, step_factor: 4.0 };
    let mut g = c.benchmark_group("theory");
    g.throughput(Throughput::Elements(cfg.trials as u64));
    g.bench_function("monte_carlo_10k", |b| {
        b.iter(|| monte_carlo_distortion(black_box(&src), &plan, 8, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_quantizer,
    bench_transforms,
    bench_step_search,
    bench_prepare,
    bench_monte_carlo
);
criterion_main!(benches);
