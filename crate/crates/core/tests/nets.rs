mod common;

use cogmap::diffengine::{Graph, NormMode, ParamSet, Tensor};
use cogmap::mazeworld::{generate, MazeConfig};
use cogmap::nets::arch::{discriminator, generator};
use cogmap::nets::losses::{
    gan_loss, gradient_penalty, kl_prior, layer_loss, mean_score, penalty_from_scores, pixel_loss,
};
use cogmap::nets::{
    frames_tensor, gather, read_checkpoint, write_checkpoint, Arch, EncodeMode, ModelBundle,
    NetError, TrainConfig, Trainer, Variant,
};
use common::{central_differences, rel_err, rng, uniform};
use rand::Rng;
use rand_distr::StandardNormal;

fn tiny(variant: Variant, tau: usize, seed: u64) -> ModelBundle {
    ModelBundle::new(Arch::new(16, 2, 3).unwrap(), variant, tau, 1.0, seed)
}

fn maze16(frames: usize) -> Tensor<f32> {
    let ds = generate(&MazeConfig {
        size: 16,
        ..MazeConfig::default()
    })
    .unwrap();
    let all = frames_tensor(&ds);
    gather(&all, &(0..frames).collect::<Vec<_>>())
}

fn small_config(batch: usize) -> TrainConfig {
    TrainConfig {
        batch_size: batch,
        ..TrainConfig::default()
    }
}

#[test]
fn full_size_architecture_layer_shapes() {
    let arch = Arch::new(64, 64, 10).unwrap();
    let plan: Vec<(usize, usize, usize)> = arch
        .conv_plan()
        .iter()
        .map(|l| (l.k, l.cout, l.stride))
        .collect();
    assert_eq!(
        plan,
        vec![
            (3, 64, 1),
            (4, 128, 2),
            (3, 128, 1),
            (4, 256, 2),
            (3, 256, 1),
            (4, 512, 2),
            (3, 512, 1)
        ]
    );
    assert_eq!(arch.conv_plan()[arch.middle_layer()].cout, 256);
    let deconv: Vec<(usize, usize)> = arch.deconv_plan().iter().map(|l| (l.k, l.cout)).collect();
    assert_eq!(deconv, vec![(4, 512), (4, 256), (4, 128), (3, 64)]);
}

#[test]
fn smaller_images_drop_leading_stages() {
    assert_eq!(Arch::new(32, 4, 10).unwrap().stages(), 2);
    assert_eq!(Arch::new(16, 4, 10).unwrap().stages(), 1);
    assert!(matches!(Arch::new(48, 4, 10), Err(NetError::Arch(_))));
}

#[test]
fn latent_and_score_dimensions() {
    let b = tiny(Variant::VaeGanPixel, 5, 1);
    let x = maze16(4);
    let z = b.encode(&x, EncodeMode::Mean).unwrap();
    assert_eq!(z.shape(), &[4, 3]);
    assert_eq!(b.critic(&x).unwrap().shape(), &[4]);
    assert_eq!(b.generate(&z).unwrap().shape(), &[4, 3, 16, 16]);
}

#[test]
fn encode_rejects_wrong_image_size() {
    let b = tiny(Variant::Vae, 0, 1);
    let err = b
        .encode(&Tensor::zeros(&[1, 3, 32, 32]), EncodeMode::Mean)
        .unwrap_err();
    assert!(matches!(err, NetError::InputShape { .. }));
}

#[test]
fn mean_encoding_is_deterministic() {
    let b = tiny(Variant::Vae, 0, 7);
    let x = maze16(8);
    assert_eq!(
        b.encode(&x, EncodeMode::Mean).unwrap(),
        b.encode(&x, EncodeMode::Mean).unwrap()
    );
}

#[test]
fn sampled_encoding_mean_converges_to_mu() {
    let b = tiny(Variant::Vae, 0, 3);
    let one = maze16(1);
    let batch = gather(&one, &[0; 100]);
    let (mu, lv) = b.encode_moments(&one).unwrap();
    let mut r = rng(11);
    let mut sum = [0.0f64; 3];
    for _ in 0..100 {
        let z = b.encode(&batch, EncodeMode::Sample(&mut r)).unwrap();
        for row in z.data().chunks(3) {
            for d in 0..3 {
                sum[d] += row[d] as f64;
            }
        }
    }
    for d in 0..3 {
        let sigma = (0.5 * lv.data()[d] as f64).exp();
        let bound = 3.0 * sigma / 100.0;
        assert!(
            (sum[d] / 10_000.0 - mu.data()[d] as f64).abs() < bound,
            "coordinate {d}"
        );
    }
}

#[test]
fn kl_closed_form_cases() {
    let g = Graph::<f64>::new();
    let kl = |mu: Vec<f64>, lv: Vec<f64>, d: usize| {
        let n = mu.len() / d;
        let mu = g.constant(Tensor::new(vec![n, d], mu).unwrap());
        let lv = g.constant(Tensor::new(vec![n, d], lv).unwrap());
        kl_prior(mu, lv).unwrap().item().unwrap()
    };
    assert_eq!(kl(vec![0.0; 6], vec![0.0; 6], 3), 0.0);
    assert!((kl(vec![1.0], vec![0.0], 1) - 0.5).abs() < 1e-15);
}

#[test]
fn kl_matches_monte_carlo() {
    let mut r = rng(5);
    let d = 3;
    let mu: Vec<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
    let sigma: Vec<f64> = (0..d).map(|_| r.random_range(0.3..2.0)).collect();
    let g = Graph::<f64>::new();
    let closed = kl_prior(
        g.constant(Tensor::new(vec![1, d], mu.clone()).unwrap()),
        g.constant(Tensor::new(vec![1, d], sigma.iter().map(|s| 2.0 * s.ln()).collect()).unwrap()),
    )
    .unwrap()
    .item()
    .unwrap();
    // E_q[log q(z) - log p(z)]
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        for k in 0..d {
            let e: f64 = r.sample(StandardNormal);
            let z = mu[k] + sigma[k] * e;
            acc += -0.5 * e * e - sigma[k].ln() + 0.5 * z * z;
        }
    }
    let mc = acc / n as f64;
    assert!(
        (mc - closed).abs() / closed < 0.01,
        "closed {closed} vs monte carlo {mc}"
    );
}

#[test]
fn pixel_loss_cases() {
    let g = Graph::<f64>::new();
    let a = Tensor::from_fn(&[2, 3, 4, 4], |i| (i as f64 * 0.37).sin());
    let same = pixel_loss(g.constant(a.clone()), g.constant(a.clone())).unwrap();
    assert_eq!(same.item().unwrap(), 0.0);

    let mut one = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
    one.data_mut()[5] = 1.0;
    let l = pixel_loss(g.constant(one), g.constant(Tensor::zeros(&[1, 3, 4, 4]))).unwrap();
    assert_eq!(l.item().unwrap(), 0.5);

    let mut r = rng(2);
    for _ in 0..20 {
        let x = uniform(&[3, 3, 5, 5], &mut r);
        let y = uniform(&[3, 3, 5, 5], &mut r);
        let mut direct = 0.0;
        for i in 0..x.len() {
            direct += (x.data()[i] - y.data()[i]).powi(2);
        }
        direct *= 0.5 / 3.0;
        let l = pixel_loss(g.constant(x), g.constant(y))
            .unwrap()
            .item()
            .unwrap();
        assert!((l - direct).abs() < 1e-12);
    }
}

#[test]
fn constant_critic_penalty_is_one() {
    let g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_fn(&[3, 3, 4, 4], |i| i as f64 * 0.01));
    let scores = x
        .scale(0.0)
        .unwrap()
        .sum_per_sample()
        .unwrap()
        .add_scalar(2.5)
        .unwrap();
    let penalty = penalty_from_scores(scores, x).unwrap().item().unwrap();
    let lambda = 10.0;
    // Dis(x_hat) - Dis(x) cancels for a constant critic.
    assert_eq!(lambda * penalty, lambda);
}

#[test]
fn linear_critic_penalty_and_score_terms() {
    let g = Graph::<f64>::new();
    let shape = [2, 3, 4, 4];
    let d = 48.0f64;
    let fake = Tensor::from_fn(&shape, |i| (i as f64 * 0.3).cos());
    let real = Tensor::from_fn(&shape, |i| (i as f64 * 0.7).sin());
    let xf = g.leaf(fake.clone());
    let fake_scores = xf.sum_per_sample().unwrap();
    let real_scores = g.constant(real.clone()).sum_per_sample().unwrap();
    let penalty = penalty_from_scores(fake_scores, xf)
        .unwrap()
        .item()
        .unwrap();
    assert!((penalty - (d.sqrt() - 1.0).powi(2)).abs() < 1e-12);
    let diff = fake_scores
        .mean()
        .unwrap()
        .sub(real_scores.mean().unwrap())
        .unwrap()
        .item()
        .unwrap();
    let direct = (fake.data().iter().sum::<f64>() - real.data().iter().sum::<f64>()) / 2.0;
    assert!((diff - direct).abs() < 1e-12);
}

#[test]
fn penalty_matches_finite_difference_input_gradients() {
    let arch = Arch::new(16, 2, 3).unwrap();
    let dis = arch.init_dis(&mut rng(4)).cast::<f64>();
    let mut r = rng(6);
    let x = uniform(&[2, 3, 16, 16], &mut r);
    let g = Graph::new();
    let bound = dis.bind_frozen(&g);
    let penalty = gradient_penalty(&arch, &bound, g.leaf(x.clone()))
        .unwrap()
        .item()
        .unwrap();

    let score = |xs: &[Tensor<f64>]| {
        let g = Graph::new();
        let b = dis.bind_frozen(&g);
        let (s, _) = discriminator(&arch, &b, g.constant(xs[0].clone()), false).unwrap();
        s.sum().unwrap().item().unwrap()
    };
    // Samples do not interact, so the gradient of the summed score splits
    // into per-sample input gradients.
    let grad = central_differences(&[x], 1e-5, &score).remove(0);
    let per = grad.len() / 2;
    let fd: f64 = grad
        .chunks(per)
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).powi(2))
        .sum::<f64>()
        / 2.0;
    assert!(
        (penalty - fd).abs() / fd.max(1e-12) < 1e-3,
        "{penalty} vs {fd}"
    );
}

#[test]
fn gan_loss_combines_its_terms() {
    let arch = Arch::new(16, 2, 3).unwrap();
    let dis = arch.init_dis(&mut rng(8)).cast::<f64>();
    let mut r = rng(9);
    let g = Graph::new();
    let b = dis.bind(&g);
    let real = g.constant(uniform(&[3, 3, 16, 16], &mut r));
    let fake = g.leaf(uniform(&[3, 3, 16, 16], &mut r));
    let t = gan_loss(&arch, &b, real, fake, None, 10.0).unwrap();
    let expect = t.fake_score.item().unwrap() - t.real_score.item().unwrap()
        + 10.0 * t.penalty.item().unwrap();
    assert!((t.total.item().unwrap() - expect).abs() < 1e-12);
    let direct = mean_score(&arch, &b, fake).unwrap().item().unwrap();
    assert_eq!(t.fake_score.item().unwrap(), direct);
}

#[test]
fn layer_loss_matches_independent_recomputation() {
    let arch = Arch::new(16, 2, 3).unwrap();
    let dis = arch.init_dis(&mut rng(12)).cast::<f64>();
    let mut r = rng(13);
    let a = uniform(&[2, 3, 16, 16], &mut r);
    let b = uniform(&[2, 3, 16, 16], &mut r);
    let g = Graph::new();
    let bound = dis.bind(&g);
    let same = layer_loss(&arch, &bound, g.constant(a.clone()), g.constant(a.clone())).unwrap();
    assert_eq!(same.item().unwrap(), 0.0);
    let loss = layer_loss(&arch, &bound, g.constant(a.clone()), g.constant(b.clone()))
        .unwrap()
        .item()
        .unwrap();
    assert!(loss > 0.0);

    let frozen = dis.clone();
    let middle = |x: &Tensor<f64>| {
        let g = Graph::new();
        let p = frozen.bind_frozen(&g);
        let (_, m) = discriminator(&arch, &p, g.constant(x.clone()), true).unwrap();
        m.unwrap().value().data().to_vec()
    };
    let (ma, mb) = (middle(&a), middle(&b));
    let direct = 0.5
        * ma.iter()
            .zip(&mb)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
        / 2.0;
    assert!((loss - direct).abs() < 1e-12 * direct.max(1.0));
}

#[test]
fn generator_output_is_squashed() {
    let b = tiny(Variant::Vae, 0, 2);
    let z = Tensor::from_fn(&[16, 3], |i| (i as f32 - 24.0) * 10.0);
    let x = b.generate(&z).unwrap();
    assert!(x.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn adversarial_term_reaches_the_generator() {
    let b = tiny(Variant::VaeGanPixel, 5, 4);
    let g = Graph::new();
    let gen = b.gen.bind(&g);
    let dis = b.dis.bind_frozen(&g);
    let mut stats = b.gen_stats.clone();
    let z = g.constant(Tensor::from_fn(&[4, 3], |i| (i as f32 * 0.9).sin()));
    let xhat = generator(
        &b.arch,
        &gen,
        &mut stats,
        z,
        NormMode::Train { update: false },
    )
    .unwrap();
    let adv = mean_score(&b.arch, &dis, xhat)
        .unwrap()
        .scale(-(b.alpha as f64))
        .unwrap();
    let grads = g.grad(adv, gen.vars(), false).unwrap();
    let norm: f32 = grads
        .iter()
        .map(|v| v.value().data().iter().map(|x| x * x).sum::<f32>())
        .sum();
    assert!(norm > 0.0);
}

#[test]
fn vae_never_touches_the_critic() {
    let frames = maze16(40);
    let b = tiny(Variant::Vae, 5, 1);
    let dis0 = b.dis.clone();
    let mut t = Trainer::new(b, Default::default());
    for _ in 0..3 {
        let rec = t.step(&frames, &small_config(4)).unwrap();
        assert_eq!(rec.critic, 0.0);
    }
    assert_eq!(t.bundle.dis, dis0);
}

#[test]
fn zero_alpha_trains_exactly_like_the_vae() {
    let frames = maze16(40);
    let mut a = Trainer::new(
        ModelBundle::new(
            Arch::new(16, 2, 3).unwrap(),
            Variant::VaeGanPixel,
            5,
            0.0,
            3,
        ),
        Default::default(),
    );
    let mut v = Trainer::new(tiny(Variant::Vae, 5, 3), Default::default());
    for _ in 0..3 {
        assert_eq!(
            a.step(&frames, &small_config(4)).unwrap(),
            v.step(&frames, &small_config(4)).unwrap()
        );
    }
    assert_eq!(a.bundle.enc, v.bundle.enc);
    assert_eq!(a.bundle.gen, v.bundle.gen);
}

#[test]
fn updates_are_isolated_per_network() {
    let frames = maze16(40);
    let mut t = Trainer::new(tiny(Variant::VaeGanPixel, 5, 2), Default::default());
    let cfg = small_config(4);
    let mut r = rng(1);
    for _ in 0..5 {
        let (enc, gen, stats, dis) = (
            t.bundle.enc.clone(),
            t.bundle.gen.clone(),
            t.bundle.gen_stats.clone(),
            t.bundle.dis.clone(),
        );
        t.critic_step(&frames, &cfg, &mut r).unwrap();
        assert_eq!(t.bundle.enc, enc);
        assert_eq!(t.bundle.gen, gen);
        assert_eq!(t.bundle.gen_stats, stats);
        assert_ne!(t.bundle.dis, dis);
    }
    let dis = t.bundle.dis.clone();
    let enc = t.bundle.enc.clone();
    t.generator_step(&frames, &cfg, &mut r).unwrap();
    assert_eq!(t.bundle.dis, dis);
    assert_ne!(t.bundle.enc, enc);
}

#[test]
fn layer_variant_fixes_alpha() {
    let b = ModelBundle::new(
        Arch::new(16, 2, 3).unwrap(),
        Variant::VaeGanLayer,
        5,
        7.0,
        1,
    );
    assert_eq!(b.alpha, 1.0);
    let frames = maze16(40);
    let mut t = Trainer::new(b, Default::default());
    let rec = t.step(&frames, &small_config(4)).unwrap();
    assert!(rec.recon.is_finite() && rec.critic != 0.0);
}

#[test]
fn loss_curves_are_reproducible() {
    let frames = maze16(40);
    let run = || {
        let mut t = Trainer::new(tiny(Variant::VaeGanPixel, 5, 9), Default::default());
        (0..4)
            .map(|_| t.step(&frames, &small_config(4)).unwrap())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn dataset_shorter_than_offset_is_rejected() {
    let frames = maze16(5);
    let mut t = Trainer::new(tiny(Variant::Vae, 5, 1), Default::default());
    assert!(matches!(
        t.step(&frames, &small_config(2)),
        Err(NetError::Config(_))
    ));
    assert!(TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
}

#[test]
fn reconstruction_improves_over_training() {
    let frames = maze16(32);
    let mut t = Trainer::new(tiny(Variant::Vae, 0, 1), Default::default());
    let cfg = TrainConfig {
        batch_size: 8,
        iterations: 500,
        ..TrainConfig::default()
    };
    let mut recon = Vec::new();
    t.run(&frames, &cfg, |r| recon.push(r.recon), |_| Ok(()))
        .unwrap();
    assert_eq!(recon.len(), 500);
    let early: f32 = recon[..20].iter().sum::<f32>() / 20.0;
    let late: f32 = recon[480..].iter().sum::<f32>() / 20.0;
    assert!(late < early, "early {early} late {late}");
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    let arch = Arch::new(16, 1, 2).unwrap();
    let mut r = rng(21);
    let b = ModelBundle::new(arch, Variant::VaeGanPixel, 0, 1.0, 21);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for set in [&b.enc, &b.gen, &b.dis] {
        for (n, t) in set.cast::<f64>().iter() {
            names.push(n.to_string());
            tensors.push(t.clone());
        }
    }
    let count: usize = tensors.iter().map(Tensor::len).sum();
    assert!(count <= 10_000);
    let stats: ParamSet<f64> = b.gen_stats.cast();
    let x_in = uniform(&[2, 3, 16, 16], &mut r);
    let x_tgt = uniform(&[2, 3, 16, 16], &mut r);
    let eps = uniform(&[2, 2], &mut r);

    let g = Graph::new();
    let leaves: Vec<_> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = common::full_vaegan_loss(
        &arch, &names, &leaves, &stats, &x_in, &x_tgt, &eps, 1.0, 10.0,
    );
    let analytic: Vec<f64> = g
        .grad(loss, &leaves, false)
        .unwrap()
        .iter()
        .flat_map(|v| v.value().data().to_vec())
        .collect();
    let eval = |ts: &[Tensor<f64>]| {
        let g = Graph::new();
        // Leaves, so the inner input gradient of the penalty is recorded.
        let vars: Vec<_> = ts.iter().map(|t| g.leaf(t.clone())).collect();
        common::full_vaegan_loss(&arch, &names, &vars, &stats, &x_in, &x_tgt, &eps, 1.0, 10.0)
            .item()
            .unwrap()
    };
    let numeric: Vec<f64> = central_differences(&tensors, 1e-7, &eval)
        .into_iter()
        .flatten()
        .collect();
    let err = rel_err(&analytic, &numeric);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn checkpoint_round_trip_is_byte_exact() {
    let frames = maze16(40);
    let mut t = Trainer::new(tiny(Variant::VaeGanPixel, 5, 4), Default::default());
    for _ in 0..2 {
        t.step(&frames, &small_config(4)).unwrap();
    }
    let mut a = Vec::new();
    write_checkpoint(&t, &mut a).unwrap();
    let loaded = read_checkpoint(&a).unwrap();
    let mut b = Vec::new();
    write_checkpoint(&loaded, &mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(loaded, t);
    let x = maze16(6);
    assert_eq!(
        loaded.bundle.encode(&x, EncodeMode::Mean).unwrap(),
        t.bundle.encode(&x, EncodeMode::Mean).unwrap()
    );
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let frames = maze16(40);
    let cfg = small_config(4);
    let mut whole = Trainer::new(tiny(Variant::VaeGanPixel, 5, 6), Default::default());
    for _ in 0..4 {
        whole.step(&frames, &cfg).unwrap();
    }
    let mut part = Trainer::new(tiny(Variant::VaeGanPixel, 5, 6), Default::default());
    for _ in 0..2 {
        part.step(&frames, &cfg).unwrap();
    }
    let mut bytes = Vec::new();
    write_checkpoint(&part, &mut bytes).unwrap();
    let mut resumed = read_checkpoint(&bytes).unwrap();
    assert_eq!(resumed.bundle.iteration, 2);
    for _ in 0..2 {
        resumed.step(&frames, &cfg).unwrap();
    }
    assert_eq!(resumed, whole);
}

#[test]
fn corrupted_checkpoints_fail_cleanly() {
    let t = Trainer::new(tiny(Variant::Vae, 0, 1), Default::default());
    let mut bytes = Vec::new();
    write_checkpoint(&t, &mut bytes).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&bad), Err(NetError::BadMagic(_))));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(read_checkpoint(&bad), Err(NetError::Version(99))));

    let cut = &bytes[..bytes.len() - 3];
    assert!(matches!(read_checkpoint(cut), Err(NetError::Truncated(_))));

    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(read_checkpoint(&bad), Err(NetError::Corrupt(_))));
}

#[test]
fn checkpoint_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let t = Trainer::new(tiny(Variant::VaeGanLayer, 30, 2), Default::default());
    cogmap::nets::save_checkpoint(&t, &path).unwrap();
    assert_eq!(cogmap::nets::load_checkpoint(&path).unwrap(), t);
}
