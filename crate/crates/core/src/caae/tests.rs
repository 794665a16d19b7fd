use super::*;
use crate::numerics::graph::Graph;

fn tiny_config() -> CaaeConfig {
    CaaeConfig {
        image_side: 32,
        feature_dim: 8,
        conv_widths: [4, 4, 8, 8],
        dimg_widths: [4, 4, 8],
        dz_hidden: [8, 8],
        leaky_slope: 0.2,
    }
}

fn random_image<S: Scalar>(side: usize, rng: &mut SeededRng) -> FaceImage<S> {
    let mut t = Tensor::zeros(&[side, side, 3]);
    rng.fill_uniform(t.data_mut(), -1.0, 1.0);
    FaceImage::new(t).unwrap()
}

#[test]
fn face_image_validation() {
    assert!(FaceImage::<f32>::new(Tensor::zeros(&[32, 32, 3])).is_ok());
    assert!(FaceImage::<f32>::new(Tensor::zeros(&[16, 16, 3])).is_err()); // too small
    assert!(FaceImage::<f32>::new(Tensor::zeros(&[48, 48, 3])).is_err()); // not a power of two
    assert!(FaceImage::<f32>::new(Tensor::zeros(&[32, 32, 1])).is_err());
    let mut bad = Tensor::<f32>::zeros(&[32, 32, 3]);
    bad.data_mut()[0] = 1.5;
    assert!(FaceImage::new(bad).is_err());
}

#[test]
fn encode_default_dimension_is_100() {
    let model = CaaeModel::<f32>::new(CaaeConfig::default(), 0).unwrap();
    let mut rng = SeededRng::new(1);
    let img = random_image(64, &mut rng);
    let h = model.encode(&img).unwrap();
    assert_eq!(h.dim(), 100);
}

#[test]
fn encode_is_deterministic_and_bounded() {
    let model = CaaeModel::<f32>::new(tiny_config(), 3).unwrap();
    let mut rng = SeededRng::new(4);
    for _ in 0..100 {
        let img = random_image(32, &mut rng);
        let h1 = model.encode(&img).unwrap();
        let h2 = model.encode(&img).unwrap();
        assert_eq!(h1.values().data(), h2.values().data());
        assert!(h1.values().data().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn decode_deterministic_with_contracted_shape() {
    let model = CaaeModel::<f32>::new(tiny_config(), 5).unwrap();
    let mut rng = SeededRng::new(6);
    let mut hv = Tensor::zeros(&[8]);
    rng.fill_uniform(hv.data_mut(), -1.0, 1.0);
    let h = FeatureVector::new(hv).unwrap();
    let l = ConditionLabel::new(4, 1).unwrap();
    let x1 = model.decode(&h, &l).unwrap();
    let x2 = model.decode(&h, &l).unwrap();
    assert_eq!(x1.pixels().data(), x2.pixels().data());
    assert_eq!(x1.pixels().shape(), &[32, 32, 3]);
    assert!(x1.pixels().data().iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn encode_rejects_wrong_side() {
    let model = CaaeModel::<f32>::new(tiny_config(), 0).unwrap();
    let mut rng = SeededRng::new(0);
    let img = random_image::<f32>(64, &mut rng);
    assert!(model.encode(&img).is_err());
}

#[test]
fn reconstruction_loss_cases() {
    let mut rng = SeededRng::new(7);
    let x: FaceImage<f64> = random_image(32, &mut rng);
    // identity
    assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);

    // all-zeros vs all-ones -> 1.0 under the mean-square convention
    let zeros = FaceImage::<f64>::new(Tensor::zeros(&[32, 32, 3])).unwrap();
    let ones = FaceImage::<f64>::new(Tensor::full(&[32, 32, 3], 1.0)).unwrap();
    assert_eq!(reconstruction_loss(&zeros, &ones).unwrap(), 1.0);

    // random pair equals the brute-force scalar loop sum/(3*S*S)
    let y: FaceImage<f64> = random_image(32, &mut rng);
    let side = 32;
    let mut acc = 0.0f64;
    for i in 0..side {
        for j in 0..side {
            for c in 0..3 {
                let idx = (i * side + j) * 3 + c;
                let d = x.pixels().data()[idx] - y.pixels().data()[idx];
                acc += d * d;
            }
        }
    }
    let want = acc / (3 * side * side) as f64;
    let got = reconstruction_loss(&x, &y).unwrap();
    assert!((got - want).abs() < 1e-12);

    // symmetry
    assert_eq!(
        reconstruction_loss(&x, &y).unwrap(),
        reconstruction_loss(&y, &x).unwrap()
    );
}

#[test]
fn sample_prior_support_mean_and_determinism() {
    let mut rng = SeededRng::new(8);
    let batch = sample_prior::<f64>(10_000, 4, &mut rng).unwrap();
    assert!(batch.data().iter().all(|v| (-1.0..1.0).contains(v)));
    for c in 0..4 {
        let mean: f64 =
            batch.data().iter().skip(c).step_by(4).sum::<f64>() / 10_000.0;
        assert!(mean.abs() <= 0.05, "coordinate {c} mean {mean}");
    }

    let a = sample_prior::<f64>(5, 3, &mut SeededRng::new(9)).unwrap();
    let b = sample_prior::<f64>(5, 3, &mut SeededRng::new(9)).unwrap();
    assert_eq!(a.data(), b.data());
}

fn zero_prefix<S: Scalar>(model: &mut CaaeModel<S>, prefix: &str) {
    for id in model.params.ids_with_prefix(prefix) {
        model.params.get_mut(id).value.fill(S::zero());
    }
}

#[test]
fn dz_losses_constant_half_discriminator() {
    // All-zero D_z weights make every output sigmoid(0) = 0.5, so the
    // discriminator loss is exactly 2*log 2.
    let mut model = CaaeModel::<f64>::new(tiny_config(), 10).unwrap();
    zero_prefix(&mut model, "d_z.");
    let mut rng = SeededRng::new(11);
    let h = sample_prior::<f64>(6, 8, &mut rng).unwrap();
    let z = sample_prior::<f64>(6, 8, &mut rng).unwrap();
    let (disc, adv) = dz_losses(&model, &h, &z).unwrap();
    assert!((disc - 2.0 * (2.0f64).ln()).abs() < 1e-12);
    assert!((adv - (2.0f64).ln()).abs() < 1e-12);
}

#[test]
fn dz_losses_perfect_discriminator_near_zero() {
    // Hand-crafted D_z: route the coordinate sum through one hidden unit and
    // amplify, so positive-sum rows score ~1 and negative-sum rows ~0.
    let mut model = CaaeModel::<f64>::new(tiny_config(), 12).unwrap();
    for id in model.params.ids_with_prefix("d_z.") {
        model.params.get_mut(id).value.fill(0.0);
    }
    let set = |model: &mut CaaeModel<f64>, name: &str, f: &dyn Fn(usize) -> f64| {
        for id in model.params.ids_with_prefix(name) {
            let p = model.params.get_mut(id);
            if p.name.ends_with(".w") {
                for (i, v) in p.value.data_mut().iter_mut().enumerate() {
                    *v = f(i);
                }
            }
        }
    };
    // fc1: [8,8] feed every input into hidden unit 0
    set(&mut model, "d_z.fc1", &|i| if i % 8 == 0 { 1.0 } else { 0.0 });
    // fc2: [8,8] pass unit 0 through
    set(&mut model, "d_z.fc2", &|i| if i == 0 { 1.0 } else { 0.0 });
    // fc3: [8,1] amplify
    set(&mut model, "d_z.fc3", &|i| if i == 0 { 60.0 } else { 0.0 });

    let h = Tensor::full(&[4, 8], -0.9); // encodings score ~0
    let z = Tensor::full(&[4, 8], 0.9); // prior samples score ~1
    let (disc, _) = dz_losses(&model, &h, &z).unwrap();
    assert!(disc > 0.0 && disc < 1e-3, "disc {disc}");
}

#[test]
fn dimg_losses_constant_half_and_monotone_generator_term() {
    let mut model = CaaeModel::<f64>::new(tiny_config(), 13).unwrap();
    zero_prefix(&mut model, "d_img.");
    let mut rng = SeededRng::new(14);
    let x = stack_images(&[random_image(32, &mut rng), random_image(32, &mut rng)]).unwrap();
    let xg = stack_images(&[random_image(32, &mut rng), random_image(32, &mut rng)]).unwrap();
    let labels = stack_labels(&[
        ConditionLabel::new(0, 0).unwrap(),
        ConditionLabel::new(4, 1).unwrap(),
    ])
    .unwrap();
    let (disc, adv_at_half) = dimg_losses(&model, &x, &xg, &labels).unwrap();
    assert!((disc - 2.0 * (2.0f64).ln()).abs() < 1e-12);

    // Raising D_img's output on generated images lowers the generator term.
    for id in model.params.ids_with_prefix("d_img.fc") {
        let p = model.params.get_mut(id);
        if p.name.ends_with(".b") {
            p.value.fill(1.0);
        }
    }
    let (_, adv_higher) = dimg_losses(&model, &x, &xg, &labels).unwrap();
    assert!(adv_higher < adv_at_half, "{adv_higher} vs {adv_at_half}");
}

#[test]
fn adversarial_loss_gradients_match_finite_differences() {
    // Spot-check d(encoder adversarial)/d(encoder params) and
    // d(generator adversarial)/d(decoder params) against central
    // differences on a tiny f64 model.
    let config = CaaeConfig {
        image_side: 32,
        feature_dim: 4,
        conv_widths: [2, 2, 2, 2],
        dimg_widths: [2, 2, 2],
        dz_hidden: [4, 4],
        leaky_slope: 0.2,
    };
    let mut model = CaaeModel::<f64>::new(config, 15).unwrap();
    let mut rng = SeededRng::new(16);
    // Zero-init biases leave some relu pre-activations exactly at the kink
    // (an all-zero receptive field in a transposed conv sums to exactly 0),
    // where the subgradient and a two-sided difference legitimately differ.
    // Small random biases make the evaluation point generic.
    for id in model.params.ids().collect::<Vec<_>>() {
        if model.params.get(id).name.ends_with(".b") {
            let p = model.params.get_mut(id);
            rng.fill_uniform(p.value.data_mut(), 0.01, 0.05);
        }
    }
    let x = stack_images(&[random_image(32, &mut rng)]).unwrap();
    let labels = stack_labels(&[ConditionLabel::new(2, 0).unwrap()]).unwrap();

    let loss_value = |model: &CaaeModel<f64>| -> f64 {
        let mut g = Graph::new();
        let xn = g.constant(x.clone()).unwrap();
        let ln = g.constant(labels.clone()).unwrap();
        let h = model.encode_batch(&mut g, xn).unwrap();
        let xg = model.decode_batch(&mut g, h, ln).unwrap();
        let ph = model.dz_forward(&mut g, h).unwrap();
        let ones = g.constant(Tensor::full(&[1, 1], 1.0)).unwrap();
        let dz_adv = g.bce(ph, ones).unwrap();
        let pg = model.dimg_forward(&mut g, xg, ln).unwrap();
        let dimg_adv = g.bce(pg, ones).unwrap();
        let total = g.add(dz_adv, dimg_adv).unwrap();
        g.value(total).item().unwrap()
    };

    // Analytic gradients.
    {
        let mut g = Graph::new();
        let xn = g.constant(x.clone()).unwrap();
        let ln = g.constant(labels.clone()).unwrap();
        let h = model.encode_batch(&mut g, xn).unwrap();
        let xg = model.decode_batch(&mut g, h, ln).unwrap();
        let ph = model.dz_forward(&mut g, h).unwrap();
        let ones = g.constant(Tensor::full(&[1, 1], 1.0)).unwrap();
        let dz_adv = g.bce(ph, ones).unwrap();
        let pg = model.dimg_forward(&mut g, xg, ln).unwrap();
        let dimg_adv = g.bce(pg, ones).unwrap();
        let total = g.add(dz_adv, dimg_adv).unwrap();
        g.backward(total).unwrap();
        model.params.zero_all_grads();
        g.accumulate_param_grads(&mut model.params);
    }

    // Step 1e-6 here, not 1e-5: perturbing a bias shifts an entire channel,
    // and with thousands of relu pre-activations some sit within 1e-5 of the
    // kink, which breaks the two-sided difference. The reverse-mode value is
    // step-free; shrinking the probe step only sharpens the oracle.
    let step = 1e-6;
    let mut checked = 0;
    let mut probe_rng = SeededRng::new(17);
    let mut ids = model.encoder_ids();
    ids.extend(model.decoder_ids());
    for id in ids {
        let coords = model.params.get(id).value.numel();
        let j = probe_rng.below(coords as u64) as usize;
        let analytic = model.params.get(id).gradient.data()[j];

        let orig = model.params.get(id).value.data()[j];
        model.params.get_mut(id).value.data_mut()[j] = orig + step;
        let up = loss_value(&model);
        model.params.get_mut(id).value.data_mut()[j] = orig - step;
        let down = loss_value(&model);
        model.params.get_mut(id).value.data_mut()[j] = orig;

        let numeric = (up - down) / (2.0 * step);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(
            err <= 1e-4,
            "param {id:?} coord {j}: analytic {analytic} vs numeric {numeric}"
        );
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn sub_network_parameters_are_disjoint() {
    let model = CaaeModel::<f32>::new(tiny_config(), 18).unwrap();
    let groups = [
        model.encoder_ids(),
        model.decoder_ids(),
        model.dz_ids(),
        model.dimg_ids(),
    ];
    let total: usize = groups.iter().map(|g| g.len()).sum();
    assert_eq!(total, model.params.len());
    let mut seen = std::collections::HashSet::new();
    for g in &groups {
        for id in g {
            assert!(seen.insert(id.index()));
        }
    }
}

#[test]
fn phases_only_touch_their_networks() {
    let mut model = CaaeModel::<f32>::new(tiny_config(), 19).unwrap();
    let mut opt = CaaeOptimizers::new(AdamConfig::default()).unwrap();
    let mut rng = SeededRng::new(20);
    let images = stack_images(&[random_image(32, &mut rng), random_image(32, &mut rng)]).unwrap();
    let labels = stack_labels(&[
        ConditionLabel::new(1, 0).unwrap(),
        ConditionLabel::new(5, 1).unwrap(),
    ])
    .unwrap();

    let before = model.params.value_snapshot();
    discriminator_phase(&mut model, &mut opt, &images, &labels, &mut rng).unwrap();
    let mid = model.params.value_snapshot();
    let disc_ids: std::collections::HashSet<usize> = model
        .dz_ids()
        .iter()
        .chain(model.dimg_ids().iter())
        .map(|id| id.index())
        .collect();
    for (i, (b, m)) in before.iter().zip(&mid).enumerate() {
        if disc_ids.contains(&i) {
            assert_ne!(b, m, "discriminator param {i} should have moved");
        } else {
            assert_eq!(b, m, "non-discriminator param {i} moved in D phase");
        }
    }

    generator_phase(&mut model, &mut opt, &images, &labels, &LossWeights::default()).unwrap();
    let after = model.params.value_snapshot();
    for (i, (m, a)) in mid.iter().zip(&after).enumerate() {
        if disc_ids.contains(&i) {
            assert_eq!(m, a, "discriminator param {i} moved in EG phase");
        } else {
            assert_ne!(m, a, "encoder/decoder param {i} should have moved");
        }
    }
}

#[test]
fn train_step_deterministic_and_reports_five_terms() {
    let run = || {
        let mut model = CaaeModel::<f32>::new(tiny_config(), 21).unwrap();
        let mut opt = CaaeOptimizers::new(AdamConfig::default()).unwrap();
        let mut rng = SeededRng::new(22);
        let images =
            stack_images(&[random_image(32, &mut rng), random_image(32, &mut rng)]).unwrap();
        let labels = stack_labels(&[
            ConditionLabel::new(0, 0).unwrap(),
            ConditionLabel::new(9, 1).unwrap(),
        ])
        .unwrap();
        let mut reports = Vec::new();
        for _ in 0..3 {
            reports.push(
                train_step(&mut model, &mut opt, &images, &labels, &LossWeights::default(), &mut rng)
                    .unwrap(),
            );
        }
        reports
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);

    // Exactly the five terms of the combined objective.
    let CaaeLossReport {
        reconstruction,
        dz_prior,
        dz_encoded,
        dimg_real,
        dimg_generated,
    } = a[0];
    for v in [reconstruction, dz_prior, dz_encoded, dimg_real, dimg_generated] {
        assert!(v.is_finite());
    }
}

#[test]
fn reconstruction_only_training_descends_on_tiny_batch() {
    let mut model = CaaeModel::<f32>::new(tiny_config(), 23).unwrap();
    let mut opt = CaaeOptimizers::new(AdamConfig::default()).unwrap();
    let mut rng = SeededRng::new(24);
    let images = stack_images(&[
        random_image(32, &mut rng),
        random_image(32, &mut rng),
        random_image(32, &mut rng),
        random_image(32, &mut rng),
    ])
    .unwrap();
    let labels = stack_labels(&[
        ConditionLabel::new(0, 0).unwrap(),
        ConditionLabel::new(2, 1).unwrap(),
        ConditionLabel::new(4, 0).unwrap(),
        ConditionLabel::new(6, 1).unwrap(),
    ])
    .unwrap();
    let weights = LossWeights {
        reconstruction: 1.0,
        dz: 0.0,
        dimg: 0.0,
    };
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let report =
            train_step(&mut model, &mut opt, &images, &labels, &weights, &mut rng).unwrap();
        assert!(
            report.reconstruction <= last,
            "step {step}: {} > {last}",
            report.reconstruction
        );
        last = report.reconstruction;
    }
}
