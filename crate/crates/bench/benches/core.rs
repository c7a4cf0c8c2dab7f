//! Benchmarks for the hot paths: nuisance fits, the three estimators, band
//! construction, and a full simulation replicate.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use fnmiss_core::bands::{build_pcb, build_scb, critical_constant};
use fnmiss_core::estimators::{estimate_cc, estimate_dr, estimate_or};
use fnmiss_core::nuisance::{fit_logistic, fit_ols};
use fnmiss_core::simulation::{replicate_rng, run_replication, StudyContext};
use fnmiss_core::{ErrorKind, Misspec, Partition, SimConfig};

fn context(n: usize) -> StudyContext {
    let mut cfg = SimConfig::new(n, ErrorKind::MaternGaussian, Misspec::None, 7);
    cfg.calibrate_missingness = true;
    StudyContext::new(cfg).expect("valid config")
}

fn bench_estimators(c: &mut Criterion) {
    let ctx = context(500);
    let mut rng = replicate_rng(7, 0);
    let gen = ctx.gen_dataset(&mut rng).unwrap();
    let ds = &gen.dataset;
    let om = fit_ols(ds, &[]).unwrap();
    let pm = fit_logistic(ds, &[]).unwrap();

    c.bench_function("fit_ols n=500", |b| b.iter(|| fit_ols(ds, &[]).unwrap()));
    c.bench_function("fit_logistic n=500", |b| {
        b.iter(|| fit_logistic(ds, &[]).unwrap())
    });
    c.bench_function("estimate_or n=500", |b| {
        b.iter(|| estimate_or(ds, &om).unwrap())
    });
    c.bench_function("estimate_dr n=500", |b| {
        b.iter(|| estimate_dr(ds, &om, &pm).unwrap())
    });
    c.bench_function("estimate_cc n=500", |b| b.iter(|| estimate_cc(ds).unwrap()));
}

fn bench_bands(c: &mut Criterion) {
    let ctx = context(500);
    let mut rng = replicate_rng(7, 1);
    let gen = ctx.gen_dataset(&mut rng).unwrap();
    let om = fit_ols(&gen.dataset, &[]).unwrap();
    let est = estimate_or(&gen.dataset, &om).unwrap();
    let whole = Partition::whole_domain();
    let quarters = Partition::from_breakpoints(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();

    c.bench_function("kac_rice_solve kappa=10", |b| {
        b.iter(|| critical_constant(10.0, 0.05).unwrap())
    });
    c.bench_function("build_scb T=50", |b| {
        b.iter(|| build_scb(&est, 0.05, &whole).unwrap())
    });
    c.bench_function("build_scb fair K=4", |b| {
        b.iter(|| build_scb(&est, 0.05, &quarters).unwrap())
    });
    c.bench_function("build_pcb T=50", |b| {
        b.iter(|| build_pcb(&est, 0.05).unwrap())
    });
}

fn bench_replicate(c: &mut Criterion) {
    let ctx = context(500);
    c.bench_function("replicate n=500 (gen+fit+band)", |b| {
        b.iter_batched(
            || 0usize,
            |i| run_replication(&ctx, i),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_estimators, bench_bands, bench_replicate);
criterion_main!(benches);
