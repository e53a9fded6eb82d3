use proptest::prelude::*;
use rand::SeedableRng;

use super::*;
use crate::cutsim::{generate_source, ConstantPolicy, SimConfig};
use crate::evalstat::MetricsConfig;
use crate::numkern::grad_check;
use crate::par::Exec;
use crate::rng::Rng;
use crate::vae::tests::random_window;

fn tiny_arch() -> PolicyArch {
    PolicyArch {
        window: 12,
        channels: vec![3, 4, 5],
        ..PolicyArch::default()
    }
}

fn tiny_net(seed: u64) -> PolicyNet {
    PolicyNet::new("p", tiny_arch(), NormStats::identity(N_S), seed).unwrap()
}

fn labelled(n: usize, seed: u64) -> (Vec<Matrix>, Matrix) {
    let mut rng = Rng::seed_from_u64(seed);
    let w: Vec<Matrix> = (0..n).map(|_| random_window(12, N_S, &mut rng)).collect();
    // Labels depend smoothly on the window so the net can fit them.
    let mut labels = Matrix::zeros(n, N_A);
    for (i, x) in w.iter().enumerate() {
        let m = x.column_means();
        for c in 0..N_A {
            labels.set(i, c, sigmoid(m[c] + 0.5 * x.get(11, c)));
        }
    }
    (w, labels)
}

fn short_sim() -> SimConfig {
    SimConfig {
        path_length: 0.03,
        approach: 0.005,
        ..SimConfig::default()
    }
}

#[test]
fn clone_matches_and_is_independent() {
    let expert = tiny_net(1);
    let mut clone = clone_expert_policy(&expert, "adapted");
    let mut rng = Rng::seed_from_u64(2);
    let w = random_window(12, N_S, &mut rng);
    assert_eq!(expert.predict_units(&[&w]).unwrap(), clone.predict_units(&[&w]).unwrap());
    assert_eq!(clone.name, "adapted");
    clone.trunk.head.weight.value[0] += 1.0;
    assert_ne!(expert.predict_units(&[&w]).unwrap(), clone.predict_units(&[&w]).unwrap());
    assert_ne!(expert.trunk, clone.trunk);
}

#[test]
fn copy_rejects_architecture_mismatch() {
    let src = tiny_net(1);
    let mut dst = tiny_net(2);
    copy_policy(&mut dst, &src).unwrap();
    assert_eq!(dst.trunk, src.trunk);
    let mut other = PolicyNet::new(
        "q",
        PolicyArch {
            channels: vec![3, 4, 6],
            ..tiny_arch()
        },
        NormStats::identity(N_S),
        0,
    )
    .unwrap();
    assert!(copy_policy(&mut other, &src).is_err());
}

#[test]
fn construction_validates() {
    assert!(PolicyNet::new("p", tiny_arch(), NormStats::identity(3), 0).is_err());
    let bad = PolicyArch { k_min: 10.0, k_max: 5.0, ..tiny_arch() };
    assert!(PolicyNet::new("p", bad, NormStats::identity(N_S), 0).is_err());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let mut norm = NormStats::identity(N_S);
    norm.mean[2] = 0.3;
    norm.std[4] = 2.5;
    let p = PolicyNet::new("expert", tiny_arch(), norm, 4).unwrap();
    p.save(&path).unwrap();
    let q = PolicyNet::load(&path).unwrap();
    assert_eq!(p, q);
    assert!(PolicyNet::load(&dir.path().join("none.json")).is_err());
}

#[test]
fn bc_gradient_matches_finite_differences() {
    for trial in 0..5u64 {
        let mut net = tiny_net(10 + trial);
        let (w, labels) = labelled(3, trial);
        let refs: Vec<&Matrix> = w.iter().collect();
        let x = windows_to_tensor(&refs).unwrap();
        let y = labels.data.clone();
        for mode in [Mode::Train, Mode::Eval] {
            let (_, grads) = bc_batch_grads(&mut net, &x, &y, mode).unwrap();
            let analytic: Vec<f64> = grads.concat();
            let base = net.flat_values();
            let mut probe = net.clone();
            let report = grad_check(
                |v| {
                    probe.set_flat_values(v).unwrap();
                    bc_batch_grads(&mut probe, &x, &y, mode).unwrap().0
                },
                &base,
                &analytic,
                1e-5,
                1e-4,
            );
            assert!(report.passed, "trial {trial} {mode:?}: {report:?}");
        }
    }
}

#[test]
fn bc_overfits_a_single_pair() {
    let mut net = tiny_net(3);
    let (w, labels) = labelled(1, 7);
    let cfg = BcConfig {
        lr: 1e-2,
        batch: 1,
        epochs: 400,
        ..BcConfig::default()
    };
    let hist = train_bc(&mut net, &w, &labels, &cfg).unwrap();
    assert!(hist.last().unwrap().train < 1e-4, "{:?}", hist.last());
    assert!(hist.last().unwrap().val.is_nan());
}

#[test]
fn zero_epochs_leave_policy_unchanged() {
    let mut net = tiny_net(3);
    let before = net.clone();
    let (w, labels) = labelled(8, 1);
    let hist = train_bc(&mut net, &w, &labels, &BcConfig { epochs: 0, ..BcConfig::default() }).unwrap();
    assert!(hist.is_empty());
    assert_eq!(net, before);
}

#[test]
fn bc_is_deterministic_and_smoothed_loss_decreases() {
    let (w, labels) = labelled(64, 5);
    let cfg = BcConfig {
        batch: 16,
        epochs: 40,
        ..BcConfig::default()
    };
    let run = || {
        let mut net = tiny_net(8);
        let h = train_bc(&mut net, &w, &labels, &cfg).unwrap();
        (net, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let smooth: Vec<f64> = ha.windows(5).map(|s| s.iter().map(|e| e.train).sum::<f64>() / 5.0).collect();
    for (i, p) in smooth.windows(2).enumerate() {
        assert!(p[1] <= p[0], "smoothed loss rose at {i}: {} -> {}", p[0], p[1]);
    }
}

#[test]
fn bc_rejects_bad_data() {
    let mut net = tiny_net(1);
    let (w, mut labels) = labelled(4, 1);
    assert!(train_bc(&mut net, &[], &Matrix::zeros(0, N_A), &BcConfig::default()).is_err());
    assert!(train_bc(&mut net, &w[..3], &labels, &BcConfig::default()).is_err());
    labels.set(0, 0, 1.5);
    assert!(train_bc(&mut net, &w, &labels, &BcConfig::default()).is_err());
    let (w, labels) = labelled(4, 1);
    assert!(train_bc(&mut net, &w, &labels, &BcConfig { val_fraction: 1.0, ..BcConfig::default() }).is_err());
    let err = train_bc(&mut net, &w, &labels, &BcConfig { lr: 1e300, ..BcConfig::default() });
    assert!(err.is_err() || net.flat_values().iter().all(|v| v.is_finite()));
}

#[test]
fn consistent_labels_do_not_drift() {
    // Labels are the net's own outputs plus small noise, as for an
    // identity-translated dataset starting from the expert clone.
    let mut net = tiny_net(6);
    let (w, _) = labelled(48, 2);
    let refs: Vec<&Matrix> = w.iter().collect();
    let u = net.predict_units(&refs).unwrap();
    let mut rng = Rng::seed_from_u64(4);
    let noise = random_window(48, N_A, &mut rng);
    let labels = Matrix::from_vec(48, N_A, u.iter().zip(&noise.data).map(|(a, n)| (a + 0.01 * n).clamp(0.0, 1.0)).collect()).unwrap();
    let (_, val) = train_val_split(48, 0.25, 0);
    let initial = bc_eval_loss(&net, &w, &labels, &val).unwrap();
    let cfg = BcConfig {
        lr: 1e-4,
        batch: 8,
        epochs: 10,
        val_fraction: 0.25,
        freeze_bn: true,
        ..BcConfig::default()
    };
    let hist = train_bc(&mut net, &w, &labels, &cfg).unwrap();
    assert!(initial < 2e-4);
    assert!(hist.iter().all(|h| h.val < 1.5 * initial), "{initial} {hist:?}");
}

#[test]
fn relabelling_schema_is_source_independent() {
    let cfg = short_sim();
    let eps = generate_source(&cfg, 2, 12, 3, 1, Exec::Sequential).unwrap();
    let expert = ScriptedExpert::for_config(&cfg, 12);
    let norm = NormStats::identity(N_S);
    let b = tiny_arch().bounds();
    let trajs: Vec<Trajectory> = eps.iter().map(|e| e.trajectory.clone()).collect();
    let off = relabel_with_expert(&trajs, &expert, &norm, &b, 5).unwrap();
    let net = tiny_net(2);
    let rolled = evaluate_indices(&net, "learner", &cfg, 9, &[0], &EvalContext::new(vec![], b, MetricsConfig::default()), Exec::Sequential).unwrap();
    let on = relabel_with_expert(&[rolled[0].episode.trajectory.clone()], &expert, &norm, &b, 5).unwrap();
    for set in [&off, &on] {
        assert!(!set.is_empty());
        assert_eq!(set.labels.cols, N_A);
        assert_eq!(set.labels.rows, set.len());
        assert_eq!(set.origin.len(), set.len());
        assert!(set.windows.iter().all(|w| w.rows == 12 && w.cols == N_S));
        assert!(set.labels.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    // The final row of each window carries the state the label was computed from.
    let (id, row) = &off.origin[3];
    let t = trajs.iter().find(|t| &t.id == id).unwrap();
    assert_eq!(off.windows[3].row(11), t.states.row(*row));
    let a = expert.evaluate(&history_window(&t.states, *row, 12));
    assert_eq!(off.labels.row(3), &action_to_units(&a, &b));
}

#[test]
fn distillation_reduces_error() {
    let cfg = short_sim();
    let eps = generate_source(&cfg, 4, 12, 5, 1, Exec::Sequential).unwrap();
    let trajs: Vec<Trajectory> = eps.iter().map(|e| e.trajectory.clone()).collect();
    let norm = NormStats::compute(trajs.iter().map(|t| &t.states)).unwrap();
    let expert = ScriptedExpert::for_config(&cfg, 12);
    let bc = BcConfig {
        lr: 3e-3,
        batch: 32,
        epochs: 15,
        val_fraction: 0.25,
        ..BcConfig::default()
    };
    let (net, report) = distill_expert(&expert, &trajs, tiny_arch(), norm, &bc, 2).unwrap();
    assert_eq!(net.name, "expert");
    assert!(report.train_windows > 0 && report.val_windows > 0);
    assert!(report.val_rms.is_finite());
    let first = report.history.first().unwrap().val;
    assert!(report.val_rms * report.val_rms < first, "{report:?}");
    assert!(distill_expert(&expert, &trajs, PolicyArch { window: 10, ..tiny_arch() }, NormStats::identity(N_S), &bc, 2).is_err());
}

#[test]
fn evaluation_is_deterministic() {
    let cfg = short_sim();
    let net = tiny_net(2);
    let ctx = EvalContext::new(vec![], tiny_arch().bounds(), MetricsConfig::default());
    assert!(evaluate_policy(&net, "x", &cfg, 0, 1, &ctx, Exec::Sequential).unwrap().is_empty());
    let a = evaluate_policy(&net, "x", &cfg, 2, 1, &ctx, Exec::Sequential).unwrap();
    let b = evaluate_policy(&net, "x", &cfg, 2, 1, &ctx, Exec::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|r| r.strategy == "x" && r.geometry == "flat"));
}

#[test]
fn baseline_completion_time_matches_kinematics() {
    // 0.2 m at the nominal 0.75 m/min takes 16 s.
    let cfg = SimConfig::default();
    let p = ConstantPolicy::baseline(1000.0, 12);
    let ctx = EvalContext::new(vec![], tiny_arch().bounds(), MetricsConfig::default());
    let rows = evaluate_policy(&p, "baseline", &cfg, 1, 0, &ctx, Exec::Sequential).unwrap();
    assert!((rows[0].completion_time - 16.0).abs() <= 0.02 * 16.0, "{}", rows[0].completion_time);
    assert!(!rows[0].fault);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn actions_respect_bounds(seed in 0u64..1000, scale in 1e-3f64..1e4) {
        let net = tiny_net(seed);
        let mut rng = Rng::seed_from_u64(seed ^ 0x55);
        let mut w = random_window(12, N_S, &mut rng);
        w.data.iter_mut().for_each(|v| *v *= scale);
        let a = net.action(&w).unwrap().to_vec();
        for (v, (lo, hi)) in a.iter().zip(tiny_arch().bounds()) {
            prop_assert!(*v >= lo && *v <= hi);
        }
    }

    #[test]
    fn unit_conversion_round_trips(u in prop::array::uniform5(0.0f64..1.0)) {
        let b = PolicyArch::default().bounds();
        let back = action_to_units(&units_to_action(&u, &b), &b);
        for (x, y) in u.iter().zip(back) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
