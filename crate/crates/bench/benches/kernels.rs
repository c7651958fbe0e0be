//! Benchmarks for the hot kernels: dictionary application, one shrinkage
//! step and the windowed sparsity norms, all at the three-layer experiment's
//! level-1 size (3600 coefficients, 21600 samples).

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mlcsc::pursuit::{ist, IstConfig};
use mlcsc::signal::{norm_l0inf_stripe, norm_l2inf_patch};
use mlcsc::threshold::ThresholdKind;
use mlcsc_bench::{ramp_signal, wavelet_dictionary};

const IN_LEN: usize = 3600;

fn bench_apply(c: &mut Criterion) {
    let d = wavelet_dictionary(IN_LEN);
    let g = ramp_signal(d.in_geom().clone(), 1.0);
    let y = ramp_signal(d.out_geom().clone(), 1.0);
    c.bench_function("synthesize_21600", |b| b.iter(|| d.synthesize(black_box(&g)).unwrap()));
    c.bench_function("analyze_21600", |b| b.iter(|| d.analyze(black_box(&y)).unwrap()));
}

fn bench_ist_step(c: &mut Criterion) {
    let d = wavelet_dictionary(IN_LEN);
    let y = ramp_signal(d.out_geom().clone(), 1.0);
    let bound = d.gram_spectral_bound(1e-6).unwrap();
    let cfg = IstConfig {
        kind: ThresholdKind::Soft,
        xi: 0.1,
        c: Some(bound),
        max_iters: 1,
        rel_tol: 0.0,
    };
    c.bench_function("ist_step_21600", |b| b.iter(|| ist(&d, black_box(&y), &cfg, None).unwrap()));
}

fn bench_norms(c: &mut Criterion) {
    let d = wavelet_dictionary(IN_LEN);
    let g = ramp_signal(d.in_geom().clone(), 1.0);
    c.bench_function("stripe_l0_3600", |b| b.iter(|| norm_l0inf_stripe(black_box(&g))));
    c.bench_function("patch_l2_3600", |b| b.iter(|| norm_l2inf_patch(black_box(&g))));
}

fn bench_coherence(c: &mut Criterion) {
    let d = wavelet_dictionary(IN_LEN);
    c.bench_function("mutual_coherence_29tap", |b| b.iter(|| d.mutual_coherence().unwrap()));
}

criterion_group!(kernels, bench_apply, bench_ist_step, bench_norms, bench_coherence);
criterion_main!(kernels);
