use super::*;
use crate::numkern::grad_check;
use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
use rand::SeedableRng;

pub(crate) fn tiny_arch() -> VaeArch {
    VaeArch {
        n_s: 2,
        window: 12,
        latent_dim: 3,
        channels: vec![3, 4, 5],
        kernel: 3,
        stride: 2,
        padding: 1,
    }
}

pub(crate) fn random_window(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn default_architecture_shapes() {
    let vae = Vae::new(VaeArch::default(), 1).unwrap();
    assert_eq!(vae.encoder.spec.lengths().unwrap(), vec![50, 25, 13]);
    let mut rng = Rng::seed_from_u64(3);
    let w = random_window(100, 7, &mut rng);
    let feats = vae.extract_features(&[&w], &STYLE_LAYERS).unwrap();
    let shapes: Vec<(usize, usize)> = feats[0].layers.iter().map(|f| (f.data.rows, f.data.cols)).collect();
    assert_eq!(shapes, vec![(128, 50), (256, 25), (512, 13)]);
    let code = vae.encode(&w, &mut rng).unwrap();
    assert_eq!(code.mu.len(), 130);
    assert_eq!(vae.decode(&code.sample).unwrap().rows, 100);
    assert_eq!(vae.decode(&code.sample).unwrap().cols, 7);
}

#[test]
fn kl_closed_forms() {
    assert_eq!(kl_divergence(&[0.0; 4], &[0.0; 4]), 0.0);
    let mut mu = vec![0.0; 130];
    mu[0] = 1.0;
    assert_eq!(kl_divergence(&mu, &vec![0.0; 130]), 0.5);
    let w = Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
    let p = elbo_loss(&w, &[0.0], &[0.0], &w, 1.0).unwrap();
    assert_eq!((p.recon, p.kl, p.total), (0.0, 0.0, 0.0));
}

#[test]
fn encode_is_deterministic_and_zero_noise_gives_mean() {
    let vae = Vae::new(tiny_arch(), 5).unwrap();
    let mut rng = Rng::seed_from_u64(9);
    let w = random_window(12, 2, &mut rng);
    let a = vae.encode(&w, &mut Rng::seed_from_u64(1)).unwrap();
    let b = vae.encode(&w, &mut Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    let z = vae.encode_with_noise(&w, &[0.0; 3]).unwrap();
    assert_eq!(z.sample, z.mu);
}

#[test]
fn feature_extraction_validates_and_is_pure() {
    let vae = Vae::new(tiny_arch(), 5).unwrap();
    let w = random_window(12, 2, &mut Rng::seed_from_u64(2));
    assert!(vae.extract_features(&[&w], &[11]).is_err());
    assert!(vae.extract_features(&[&w], &[]).unwrap()[0].is_empty());
    let before = vae.clone();
    let a = vae.extract_features(&[&w], &[7, 2, 5]).unwrap();
    let b = vae.extract_features(&[&w], &[2, 5, 7]).unwrap();
    assert_eq!(a, b);
    assert_eq!(vae, before);
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let arch = tiny_arch();
    let mut rng = Rng::seed_from_u64(11);
    for trial in 0..3 {
        let mut vae = Vae::new(arch.clone(), trial).unwrap();
        let w1 = random_window(12, 2, &mut rng);
        let w2 = random_window(12, 2, &mut rng);
        let x = windows_to_tensor(&[&w1, &w2]).unwrap();
        let eps: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let (_, grads) = vae.loss_and_grads(&x, &eps, 0.7, Mode::Train).unwrap();
        let analytic: Vec<f64> = grads.concat();
        let theta = vae.flat_values();
        let probe = vae.clone();
        let report = grad_check(
            |p: &[f64]| {
                let mut v = probe.clone();
                v.set_flat_values(p).unwrap();
                v.loss_and_grads(&x, &eps, 0.7, Mode::Train).unwrap().0.total
            },
            &theta,
            &analytic,
            1e-5,
            1e-4,
        );
        assert!(report.passed, "trial {trial}: {report:?}");
    }
}

#[test]
fn zero_epochs_leaves_model_unchanged() {
    let mut vae = Vae::new(tiny_arch(), 2).unwrap();
    let before = vae.clone();
    let ws = vec![random_window(12, 2, &mut Rng::seed_from_u64(0))];
    let cfg = VaeTrainConfig {
        epochs: 0,
        ..Default::default()
    };
    assert!(train_vae(&mut vae, &ws, &cfg).unwrap().is_empty());
    assert_eq!(vae, before);
}

#[test]
fn toy_set_overfits() {
    let arch = VaeArch {
        n_s: 3,
        window: 20,
        latent_dim: 16,
        channels: vec![8, 16, 32],
        ..VaeArch::default()
    };
    let mut rng = Rng::seed_from_u64(4);
    let ws: Vec<Matrix> = (0..10)
        .map(|k| {
            let ph = k as f64 * 0.6;
            let data = (0..20)
                .flat_map(|t| {
                    let t = t as f64 * 0.3;
                    [(t + ph).sin(), (0.5 * t - ph).cos(), 0.3 * (t * ph * 0.2).sin()]
                })
                .collect();
            Matrix::from_vec(20, 3, data).unwrap()
        })
        .collect();
    let _ = &mut rng;
    let mut vae = Vae::new(arch, 8).unwrap();
    let cfg = VaeTrainConfig {
        epochs: 500,
        batch: 10,
        kl_weight: 0.01,
        ..Default::default()
    };
    let h = train_vae(&mut vae, &ws, &cfg).unwrap();
    let (first, last) = (h[0].total, h.last().unwrap().total);
    assert!(last * 10.0 < first, "{first} -> {last}");
    let mut se = 0.0;
    for w in &ws {
        let mu = vae.posterior(&[w]).unwrap().0;
        let r = vae.decode(&mu).unwrap();
        se += w.data.iter().zip(&r.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let rmse = (se / (10.0 * 60.0)).sqrt();
    assert!(rmse < 0.1, "rmse {rmse}");
    let a = vae.decode(&[0.0; 16]).unwrap();
    let b = vae.decode(&[1.0; 16]).unwrap();
    assert_ne!(a, b);
}

#[test]
fn training_is_deterministic() {
    let ws: Vec<Matrix> = (0..6).map(|k| random_window(12, 2, &mut Rng::seed_from_u64(k))).collect();
    let cfg = VaeTrainConfig {
        epochs: 3,
        batch: 4,
        ..Default::default()
    };
    let mut a = Vae::new(tiny_arch(), 1).unwrap();
    let mut b = Vae::new(tiny_arch(), 1).unwrap();
    let ha = train_vae(&mut a, &ws, &cfg).unwrap();
    let hb = train_vae(&mut b, &ws, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut vae = Vae::new(tiny_arch(), 3).unwrap();
    vae.encoder.bns[1].running_var[2] = 0.123456789012345;
    let p = dir.path().join("vae.json");
    vae.save(&p).unwrap();
    assert_eq!(Vae::load(&p).unwrap(), vae);
}

proptest! {
    #[test]
    fn kl_is_nonnegative_and_zero_only_at_the_prior(
        mu in prop::collection::vec(-5f64..5.0, 1..20),
        lv_seed in prop::collection::vec(-5f64..5.0, 20),
    ) {
        let lv = &lv_seed[..mu.len()];
        let kl = kl_divergence(&mu, lv);
        prop_assert!(kl >= 0.0);
        let at_prior = mu.iter().chain(lv).all(|v| *v == 0.0);
        prop_assert_eq!(kl == 0.0, at_prior);
    }

    #[test]
    fn reparametrisation_is_deterministic_for_fixed_noise(
        mu in prop::collection::vec(-5f64..5.0, 6),
        lv in prop::collection::vec(-4f64..4.0, 6),
        eps in prop::collection::vec(-3f64..3.0, 6),
    ) {
        let a = reparametrise(&mu, &lv, &eps);
        prop_assert_eq!(&a, &reparametrise(&mu, &lv, &eps));
        for i in 0..6 {
            prop_assert!((a[i] - (mu[i] + (0.5 * lv[i]).exp() * eps[i])).abs() < 1e-12 * (1.0 + a[i].abs()));
        }
    }
}
