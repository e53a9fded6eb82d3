//! Sequential against data-parallel execution of the hot loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng as _, SeedableRng};
use trajstyle::cutsim::{generate_source, SimConfig};
use trajstyle::matrix::Matrix;
use trajstyle::pairing::{embed_dataset, match_sets};
use trajstyle::rng::{stream, Rng};
use trajstyle::styletx::{transfer_many, TransferConfig};
use trajstyle::trajdata::{DomainTag, Window};
use trajstyle::vae::{Vae, VaeArch};
use trajstyle::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn small_vae() -> Vae {
    let arch = VaeArch {
        channels: vec![16, 32, 64],
        latent_dim: 16,
        ..VaeArch::default()
    };
    Vae::new(arch, 1).unwrap()
}

fn windows(n: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Matrix::from_vec(100, 7, (0..700).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
        .collect()
}

fn bench_simulation(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate-8-episodes");
    g.sample_size(10);
    let cfg = SimConfig {
        path_length: 0.05,
        ..SimConfig::default()
    };
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_source(&cfg, 8, 100, 0, stream::SOURCE_EPISODES, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_transfer(c: &mut Criterion) {
    let vae = small_vae();
    let cs = windows(32, 1);
    let ss = windows(32, 2);
    let cr: Vec<&Matrix> = cs.iter().collect();
    let sr: Vec<&Matrix> = ss.iter().collect();
    let cfg = TransferConfig {
        iterations: 10,
        batch: 8,
        early_stop: None,
        ..TransferConfig::default()
    };
    let mut g = c.benchmark_group("transfer-32-windows");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| transfer_many(&cr, &sr, &vae, &cfg, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_pairing(c: &mut Criterion) {
    let vae = small_vae();
    let wrap = |ms: Vec<Matrix>| -> Vec<Window> { ms.into_iter().enumerate().map(|(i, m)| Window::new(format!("w{i}"), 0, m)).collect() };
    let cs = wrap(windows(256, 3));
    let ss = wrap(windows(256, 4));
    let ce = embed_dataset(&cs, &vae, DomainTag::Source, Exec::Parallel).unwrap();
    let se = embed_dataset(&ss, &vae, DomainTag::Target, Exec::Parallel).unwrap();
    let mut g = c.benchmark_group("match-256x256");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| match_sets(&ce, &se, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_simulation, bench_transfer, bench_pairing);
criterion_main!(benches);
