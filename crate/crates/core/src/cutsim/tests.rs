use std::f64::consts::PI;

use rand::SeedableRng;

use super::*;
use crate::rng::Rng;
use crate::trajdata::DomainTag;

fn oracle_average(c: &CutterModel, m: &MaterialParams, doc: f64, feed: f64) -> [f64; 3] {
    // Teeth are uniformly spread, so the revolution average is the arc
    // integral of the elemental force times teeth per radian.
    let phi_in = PI - (1.0 - doc / (c.radius * 1e3)).acos();
    let f_t = feed * 1e3 / (c.n_teeth as f64 * c.spindle_speed);
    let n = 200_000;
    let h = (PI - phi_in) / n as f64;
    let mut acc = [0.0; 3];
    for i in 0..=n {
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let phi = phi_in + i as f64 * h;
        let d = tooth_force(c, m, f_t, phi);
        for k in 0..3 {
            acc[k] += w * d[k];
        }
    }
    acc.map(|v| v * h / 3.0 * c.n_teeth as f64 / (2.0 * PI))
}

#[test]
fn revolution_average_matches_quadrature() {
    let c = CutterModel::default();
    let m = MaterialParams::new("oracle", 100.0, 0.1);
    let got = revolution_average(&c, &m, 1.0, 0.75, 3600).unwrap();
    let want = oracle_average(&c, &m, 1.0, 0.75);
    for k in [0, 2] {
        assert!(((got[k] - want[k]) / want[k]).abs() < 0.02, "axis {k}: {} vs {}", got[k], want[k]);
    }
    assert_eq!(got[1], 0.0);
}

fn state(k: f64) -> ImpedanceState {
    ImpedanceState {
        position: [0.0; 3],
        velocity: [0.0; 3],
        stiffness: [k; 3],
        mass: 5.0,
        reference: [0.0; 3],
        reference_velocity: [0.0; 3],
    }
}

#[test]
fn zero_stiffness_stays_put() {
    let mut s = state(0.0);
    s.reference = [0.01, -0.02, 0.03];
    for _ in 0..1000 {
        s.step(&[0.0; 3], 0.002, 0.0);
    }
    assert_eq!(s.position, [0.0; 3]);
}

#[test]
fn critically_damped_step_has_no_overshoot() {
    for k in [200.0, 1000.0, 5000.0] {
        let mut s = state(k);
        let step = 1e-3;
        s.reference = [step; 3];
        let mut max_err = 0.0f64;
        for i in 1..=5000 {
            s.step(&[0.0; 3], 0.002, 0.0);
            let e = step - s.position[0];
            assert!(e >= -1e-3 * step, "k={k}: overshoot {e} at step {i}");
            let exact = critically_damped_error(step, k, 5.0, i as f64 * 0.002);
            max_err = max_err.max((e - exact).abs());
        }
        assert!(max_err < 0.2 * step, "k={k}: deviates from closed form by {max_err}");
    }
}

#[test]
fn energy_never_increases_without_cutting() {
    let mut s = state(2500.0);
    s.reference = [0.002, -0.001, 0.003];
    s.velocity = [0.05, -0.1, 0.02];
    let mut e = s.energy();
    for _ in 0..3000 {
        s.step(&[0.0; 3], 0.002, 0.0);
        let e2 = s.energy();
        assert!(e2 <= e * (1.0 + 1e-12), "{e2} > {e}");
        e = e2;
    }
}

#[test]
fn lag_filter_matches_closed_form() {
    let mut f = LagFilter::new(0.04);
    for k in 1..=20 {
        for _ in 0..10 {
            f.update(&[1.0, 2.0, -3.0], 0.002);
        }
        let t = k as f64 * 0.02;
        let want = 1.0 - (-t / 0.04f64).exp();
        assert!((f.state[0] - want).abs() < 1e-9);
        assert!((f.state[2] + 3.0 * want).abs() < 1e-9);
    }
    let mut id = LagFilter::new(0.0);
    assert_eq!(id.update(&[0.3, 0.1, 0.2], 0.002), [0.3, 0.1, 0.2]);
}

fn noise() -> Rng {
    Rng::seed_from_u64(0)
}

#[test]
fn baseline_completes_in_path_over_feed() {
    let cfg = SimConfig::default();
    let mut p = ConstantPolicy::baseline(1000.0, 100);
    let ep = run_episode(&cfg, &mut p, noise(), "b", DomainTag::Source, 0).unwrap();
    assert!(!ep.meta.fault);
    assert!((ep.meta.completion_time - 16.0).abs() < 0.02 * 16.0, "{}", ep.meta.completion_time);
    for r in 0..ep.trajectory.len() {
        let pr = ep.trajectory.states.get(r, obs::PROGRESS);
        assert!((0.0..=1.0).contains(&pr));
    }
}

#[test]
fn zero_length_path_is_empty() {
    let cfg = SimConfig {
        path_length: 0.0,
        approach: 0.0,
        ..SimConfig::default()
    };
    let mut p = ConstantPolicy::baseline(1000.0, 100);
    let ep = run_episode(&cfg, &mut p, noise(), "z", DomainTag::Source, 0).unwrap();
    assert!(ep.trajectory.is_empty());
    assert_eq!(ep.meta.completion_time, 0.0);
}

#[test]
fn episodes_are_deterministic() {
    let cfg = SimConfig::target_default();
    let a = generate_target(&cfg, &MaterialParams::surrogates(), &Geometry::standard_set(), 2, 100, 7, 1, crate::Exec::Parallel).unwrap();
    let b = generate_target(&cfg, &MaterialParams::surrogates(), &Geometry::standard_set(), 2, 100, 7, 1, crate::Exec::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unperturbed_target_equals_source() {
    let src = SimConfig {
        material: MaterialParams::new("m", 800.0, 4.0),
        ..SimConfig::default()
    };
    let tgt = SimConfig {
        perturbation: Perturbation::none(),
        ..SimConfig::target_default()
    };
    let tgt = SimConfig {
        material: src.material.clone(),
        ..tgt
    };
    let run = |c: &SimConfig| {
        let mut p = ScriptedExpert::for_config(c, 100);
        run_episode(c, &mut p, Rng::seed_from_u64(5), "x", DomainTag::Source, 5).unwrap()
    };
    assert_eq!(run(&src), run(&tgt));
}

#[test]
fn sensor_without_lag_reports_true_force() {
    let cfg = SimConfig {
        material: MaterialParams::new("m", 800.0, 4.0),
        ..SimConfig::default()
    };
    let mut sim = Sim::new(&cfg, noise()).unwrap();
    sim.apply_action(&Action::nominal(1000.0));
    for _ in 0..5000 {
        sim.step().unwrap();
        assert_eq!(sim.sensed, sim.true_force);
    }
    assert!(norm(&sim.true_force) > 0.0);
}
