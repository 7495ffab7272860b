//! Benchmarks for the data-parallel inner loops: bootstrap replicates,
//! tau-grid estimation, and panel simulation.
//!
//! With the default `parallel` feature each group also measures a forced
//! single-thread pool for a direct scaling comparison; building with
//! `--no-default-features` benchmarks the sequential fallback itself.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use capstruct::features::{ColumnRole, DesignColumn, DesignMatrix, LeverageForm};
use capstruct::numerics::{Matrix, RandomSource};
use capstruct::panel_quantreg::{decile_grid, fit_tau_grid, PanelQrOptions};
use capstruct::panel_store::FirmId;
use capstruct::quantreg::bootstrap_covariance;
use capstruct::simulate::{simulate_panel, DgpConfig, RecessionPattern};

fn bootstrap_inputs() -> (Matrix, Vec<f64>) {
    let mut rng = RandomSource::new(1);
    let n = 400;
    let x = Matrix::from_columns(&[
        vec![1.0; n],
        (0..n).map(|_| rng.normal(0.0, 1.0)).collect(),
        (0..n).map(|_| rng.normal(0.0, 1.0)).collect(),
    ]);
    let y: Vec<f64> = (0..n)
        .map(|i| 0.5 + 0.8 * x[(i, 1)] - 0.3 * x[(i, 2)] + rng.normal(0.0, 0.5))
        .collect();
    (x, y)
}

fn grid_design() -> DesignMatrix {
    let mut rng = RandomSource::new(2);
    let mut keys = Vec::new();
    let mut y = Vec::new();
    let mut xs = Vec::new();
    for f in 0..40 {
        let alpha = rng.normal(0.0, 1.0);
        for t in 0..10 {
            let x = rng.normal(0.0, 1.0);
            keys.push((FirmId(format!("f{f:03}")), 2000 + t));
            y.push(alpha + 0.5 * x + rng.normal(0.0, 0.6));
            xs.push(x);
        }
    }
    let n = keys.len();
    DesignMatrix::from_parts(
        keys,
        y,
        vec![DesignColumn {
            name: "x".to_string(),
            role: ColumnRole::FirmFactor,
            values: xs,
        }],
        vec![0.0; n],
        LeverageForm::Tdr,
        false,
    )
    .unwrap()
}

fn sim_config() -> DgpConfig {
    DgpConfig {
        n_firms: 300,
        n_years: 40,
        recession: RecessionPattern::Years {
            years: (0..40).filter(|t| t % 4 == 1).map(|t| 2000 + t).collect(),
        },
        seed: 3,
        ..DgpConfig::default()
    }
}

fn bench_bootstrap(c: &mut Criterion) {
    let (x, y) = bootstrap_inputs();
    let src = RandomSource::new(10);
    let mut group = c.benchmark_group("bootstrap_covariance_b64");
    group.sample_size(20);
    group.bench_function("default", |b| {
        b.iter(|| black_box(bootstrap_covariance(&x, &y, 0.5, 64, &src, None).unwrap()))
    });
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("one_thread", |b| {
            b.iter(|| {
                pool.install(|| black_box(bootstrap_covariance(&x, &y, 0.5, 64, &src, None).unwrap()))
            })
        });
    }
    group.finish();
}

fn bench_tau_grid(c: &mut Criterion) {
    let design = grid_design();
    let opts = PanelQrOptions::default();
    let src = RandomSource::new(11);
    let taus = decile_grid();
    let mut group = c.benchmark_group("tau_grid_deciles");
    group.sample_size(20);
    group.bench_function("default", |b| {
        b.iter(|| black_box(fit_tau_grid(&design, &taus, &opts, &src).unwrap()))
    });
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("one_thread", |b| {
            b.iter(|| pool.install(|| black_box(fit_tau_grid(&design, &taus, &opts, &src).unwrap())))
        });
    }
    group.finish();
}

fn bench_simulate(c: &mut Criterion) {
    let cfg = sim_config();
    let mut group = c.benchmark_group("simulate_panel_300x40");
    group.sample_size(20);
    group.bench_function("default", |b| b.iter(|| black_box(simulate_panel(&cfg).unwrap())));
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("one_thread", |b| {
            b.iter(|| pool.install(|| black_box(simulate_panel(&cfg).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_bootstrap, bench_tau_grid, bench_simulate);
criterion_main!(benches);
