use std::fs;

use super::*;
use crate::par::Exec;

fn small() -> RunConfig {
    let mut c = RunConfig::smoke();
    c.vae_train.epochs = 5;
    c.transfer.iterations = 20;
    c
}

#[test]
fn disk_pipeline_matches_the_in_memory_run() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::new(dir.path(), cfg.clone(), Exec::Parallel).unwrap();
    run.run_all().unwrap();
    let disk = crate::evalstat::read_metrics_csv(&dir.path().join("evaluate/metrics.csv")).unwrap();
    let mem = run_in_memory(&cfg, Exec::Sequential).unwrap();
    assert_eq!(disk, mem.rows);
    assert!(run.warnings().is_empty());
}

#[test]
fn regenerating_an_upstream_artifact_reproduces_downstream_ones() {
    let dir = tempfile::tempdir().unwrap();
    let mut run = Run::new(dir.path(), small(), Exec::Parallel).unwrap();
    run.simulate().unwrap();
    run.gen_target().unwrap();
    run.train_vae().unwrap();
    run.pair().unwrap();
    let vae = fs::read(dir.path().join("train-vae/vae.json")).unwrap();
    let pairing = fs::read(dir.path().join("pair/pairing.json")).unwrap();
    fs::remove_dir_all(dir.path().join("train-vae")).unwrap();
    assert!(run.pair().is_err());
    run.train_vae().unwrap();
    run.pair().unwrap();
    assert_eq!(fs::read(dir.path().join("train-vae/vae.json")).unwrap(), vae);
    assert_eq!(fs::read(dir.path().join("pair/pairing.json")).unwrap(), pairing);
}

#[test]
fn schedule_interleaves_strategies() {
    let cfg = small();
    let jobs = stages::eval_schedule(&cfg, 3);
    assert_eq!(jobs.len(), 3 * cfg.geometries.len() * cfg.eval.episodes_per_geometry);
    for (k, j) in jobs.iter().enumerate() {
        assert_eq!(j.seed_index, k as u64);
        assert_eq!(j.strategy, k % 3);
    }
}

#[test]
fn config_hash_tracks_every_field() {
    let a = small();
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
    let mut c = a.clone();
    c.transfer.iterations += 1;
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn profiles_carry_the_reference_sizes() {
    let p = RunConfig::full();
    assert_eq!((p.data.source_count, p.data.target_count, p.data.content_count), (680, 148, 50));
    assert_eq!(p.vae.latent_dim, 130);
    assert_eq!(p.transfer.iterations, 1000);
    let s = RunConfig::smoke();
    assert_eq!((s.data.source_count, s.data.target_count), (8, 8));
    assert_eq!((s.vae_train.epochs, s.transfer.iterations), (50, 100));
    assert_eq!(p.eval.strategies, STRATEGIES.iter().map(|s| s.to_string()).collect::<Vec<_>>());
}
