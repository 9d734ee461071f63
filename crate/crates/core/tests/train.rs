mod common;

use common::{fd_check, rng, uniform};
use proptest::prelude::*;
use tfformer::color::RgbImage;
use tfformer::model::{load_checkpoint, ModelConfig, TfFormerModel};
use tfformer::tensor::{self, Parameter, Tensor};
use tfformer::train::*;

fn constant(rgb: [f64; 3]) -> Tensor {
    RgbImage::filled(4, 5, rgb).into_tensor()
}

#[test]
fn lcc_distance_cases() {
    let a = constant([0.2, 0.7, 0.4]);
    assert_eq!(lcc_distance(&a, &a).unwrap().item(), 0.0);
    let gray = lcc_distance(&constant([0.5; 3]), &constant([0.6; 3])).unwrap().item();
    assert!((gray - 0.1).abs() < 1e-12, "{gray}");
    let red = lcc_distance(&constant([1.0, 0.0, 0.0]), &constant([0.0; 3])).unwrap().item();
    assert!((red - 1.598).abs() < 1e-12, "{red}");
    assert!(lcc_distance(&a, &RgbImage::filled(4, 4, [0.0; 3]).into_tensor()).is_err());
}

#[test]
fn gray_shift_total_loss() {
    let gt = constant([0.5; 3]);
    let pred = constant([0.6; 3]);
    let loss = total_loss(&gt, &pred, &pred, 0.2).unwrap().item();
    assert!((loss - 0.08).abs() < 1e-12, "{loss}");
    assert_eq!(total_loss(&gt, &gt, &gt, 0.2).unwrap().item(), 0.0);
    assert!(total_loss(&gt, &gt, &pred, 0.2).unwrap().item() > 0.0);
    assert!(total_loss(&gt, &pred, &gt, 0.2).unwrap().item() > 0.0);
}

#[test]
fn batched_loss_averages_over_pixels() {
    let gt = Tensor::from_vec(vec![2, 3, 1, 1], vec![0.5, 0.5, 0.5, 0.1, 0.1, 0.1]).unwrap();
    let pred = Tensor::from_vec(vec![2, 3, 1, 1], vec![0.6, 0.6, 0.6, 0.1, 0.1, 0.1]).unwrap();
    assert!((lcc_distance(&gt, &pred).unwrap().item() - 0.05).abs() < 1e-12);
    assert!((l1(&gt, &pred).unwrap().item() - 0.05).abs() < 1e-12);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut g = rng(3);
    let gt = Tensor::from_vec(vec![1, 3, 3, 4], uniform(&mut g, 36, 0.0, 1.0)).unwrap();
    let rec = Tensor::leaf(vec![1, 3, 3, 4], uniform(&mut g, 36, 0.0, 1.0)).unwrap();
    let refined = Tensor::leaf(vec![1, 3, 3, 4], uniform(&mut g, 36, 0.0, 1.0)).unwrap();
    let err = fd_check(&[rec, refined], |p| total_loss(&gt, &p[0], &p[1], 0.2).unwrap());
    assert!(err < 1e-4, "relative error {err}");
}

/// A parameter whose gradient after `backward` equals `grad`.
fn with_grad(name: &str, value: Vec<f64>, grad: &[f64]) -> Parameter {
    let p = Parameter::new(name, vec![value.len()], value).unwrap();
    let w = Tensor::from_vec(vec![grad.len()], grad.to_vec()).unwrap();
    tensor::sum(&tensor::mul(&p.value, &w).unwrap()).backward().unwrap();
    p
}

#[test]
fn first_adam_step_closed_form() {
    let mut params = vec![with_grad("w", vec![0.0], &[1.0])];
    let mut adam = Adam::new(&params, 0.9, 0.99, 1e-8);
    adam.step(&mut params, 1e-4).unwrap();
    let want = -1e-4 * (1.0 / (1.0 - 0.9)) * 0.1 / ((1.0f64 * 0.01 / (1.0 - 0.99)).sqrt() + 1e-8);
    let got = params[0].value.data()[0];
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!((got + 1e-4 / (1.0 + 1e-8)).abs() < 1e-12);
    assert!(params[0].value.grad().is_none());
}

#[test]
fn two_adam_steps_match_hand_oracle() {
    let (b1, b2, eps, lr) = (0.9f64, 0.99f64, 1e-8, 1e-3);
    let g = [0.5, -2.0, 3.0];
    let mut params = vec![with_grad("w", vec![1.0, 2.0, -1.0], &g)];
    let mut adam = Adam::new(&params, b1, b2, eps);
    adam.step(&mut params, lr).unwrap();
    let after_one = params[0].value.to_vec();
    params[0] = with_grad("w", after_one, &g);
    adam.step(&mut params, lr).unwrap();

    let mut want = [1.0, 2.0, -1.0];
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    for t in 1..=2 {
        for i in 0..3 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            want[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    for (a, b) in params[0].value.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(adam.t, 2);
}

#[test]
fn zero_gradient_leaves_parameter() {
    let mut params = vec![with_grad("w", vec![0.3, -0.7], &[0.0, 0.0]), Parameter::new("u", vec![1], vec![2.0]).unwrap()];
    let mut adam = Adam::new(&params, 0.9, 0.99, 1e-8);
    adam.step(&mut params, 1e-2).unwrap();
    assert_eq!(params[0].value.data(), &[0.3, -0.7]);
    assert_eq!(params[1].value.data(), &[2.0]);
}

#[test]
fn nan_gradient_aborts_with_name() {
    let mut params = vec![with_grad("ok", vec![1.0], &[1.0]), with_grad("enc.stage0.bad", vec![1.0], &[f64::NAN])];
    let mut adam = Adam::new(&params, 0.9, 0.99, 1e-8);
    let err = adam.step(&mut params, 1e-3).unwrap_err();
    assert!(err.to_string().contains("enc.stage0.bad"), "{err}");
    assert_eq!(params[0].value.data(), &[1.0]);
    assert_eq!(adam.t, 0);
}

#[test]
fn adam_step_descends_a_quadratic() {
    let target = [0.3, -1.2, 2.0];
    let curv = [1.0, 4.0, 0.5];
    let loss = |x: &[f64]| (0..3).map(|i| 0.5 * curv[i] * (x[i] - target[i]).powi(2)).sum::<f64>();
    let mut x = vec![1.0, 1.0, 1.0];
    let mut adam = Adam::new(&[Parameter::new("x", vec![3], x.clone()).unwrap()], 0.9, 0.99, 1e-8);
    for _ in 0..5 {
        let g: Vec<f64> = (0..3).map(|i| curv[i] * (x[i] - target[i])).collect();
        let mut params = vec![with_grad("x", x.clone(), &g)];
        let before = loss(&x);
        adam.step(&mut params, 0.05).unwrap();
        x = params[0].value.to_vec();
        assert!(loss(&x) < before);
    }
}

#[test]
fn plateau_contract() {
    let mut p = Plateau::new(0.5, 5, 1e-6);
    let mut lr = 1e-4;
    for k in 0..20 {
        lr = p.step(10.0 + k as f64, lr);
    }
    assert_eq!(lr, 1e-4);

    let mut p = Plateau::new(0.5, 5, 1e-6);
    let lrs: Vec<f64> = (0..6).map(|_| p.step(20.0, 1e-4)).collect();
    assert_eq!(&lrs[..5], &[1e-4; 5]);
    assert_eq!(lrs[5], 5e-5);

    let mut p = Plateau::new(0.5, 1, 1e-6);
    let mut lr = 1e-6;
    for _ in 0..4 {
        lr = p.step(1.0, lr);
    }
    assert_eq!(lr, 1e-6);
}

#[test]
fn sampler_is_a_function_of_seed_and_index() {
    let data = PairSet::synthetic(3, 12, 1).unwrap();
    let a = data.sample(5, 17, 8).unwrap();
    let b = data.sample(5, 17, 8).unwrap();
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
    // every epoch visits every pair exactly once
    for epoch in 0..4u64 {
        let mut seen: Vec<usize> = (0..3)
            .map(|i| {
                let (_, r) = data.sample(5, epoch * 3 + i, 12).unwrap();
                data.pairs.iter().position(|p| p.1.data() == r.data()).unwrap()
            })
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2]);
    }
    assert!(data.sample(5, 0, 13).is_err());
}

fn tiny_model(seed: u64) -> TfFormerModel {
    let cfg = ModelConfig {
        base_width: 4,
        heads_per_stage: vec![1, 1, 2],
        bottleneck_heads: 2,
        refine_width: 2,
        ..Default::default()
    };
    TfFormerModel::new(cfg, seed).unwrap()
}

fn tiny_config(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        patch: 8,
        lr: 1e-3,
        val_interval: 2,
        checkpoint_interval: 3,
        scheduler_start: 0,
        ..Default::default()
    }
}

#[test]
fn first_loss_is_finite_and_positive() {
    let data = PairSet::synthetic(2, 8, 4).unwrap();
    let mut model = tiny_model(7);
    let cfg = tiny_config(1);
    let mut state = TrainState::new(&model, &cfg);
    let r = train(&mut model, &data, &data, &cfg, &mut state, None).unwrap();
    assert!(r.losses[0].is_finite() && r.losses[0] > 0.0);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let data = PairSet::synthetic(3, 12, 2).unwrap();
    let run = || {
        let mut model = tiny_model(7);
        let cfg = tiny_config(5);
        let mut state = TrainState::new(&model, &cfg);
        let r = train(&mut model, &data, &data, &cfg, &mut state, None).unwrap();
        (r, state)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.losses), bits(&b.losses));
    assert_eq!(a.log, b.log);
    assert_eq!(sa, sb);
    let steps: Vec<u64> = a.log.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![2, 4]);
}

#[test]
fn resumed_run_continues_identically() {
    let data = PairSet::synthetic(3, 12, 3).unwrap();
    let full_dir = tempfile::tempdir().unwrap();
    let full_files = RunFiles { dir: full_dir.path().into() };
    let mut model = tiny_model(7);
    let cfg = tiny_config(6);
    let mut state = TrainState::new(&model, &cfg);
    let full = train(&mut model, &data, &data, &cfg, &mut state, Some(&full_files)).unwrap();

    let part_dir = tempfile::tempdir().unwrap();
    let part_files = RunFiles { dir: part_dir.path().into() };
    let mut model = tiny_model(7);
    let short = TrainConfig { steps: 3, ..cfg.clone() };
    let mut state = TrainState::new(&model, &short);
    train(&mut model, &data, &data, &short, &mut state, Some(&part_files)).unwrap();

    let mut model = load_checkpoint(part_files.checkpoint()).unwrap();
    let mut state = TrainState::load(part_files.state()).unwrap();
    assert_eq!(state.step, 3);
    let rest = train(&mut model, &data, &data, &cfg, &mut state, Some(&part_files)).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&rest.losses), bits(&full.losses[3..]));
    assert_eq!(
        std::fs::read(part_files.checkpoint()).unwrap(),
        std::fs::read(full_files.checkpoint()).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(part_files.metric_log()).unwrap(),
        std::fs::read_to_string(full_files.metric_log()).unwrap()
    );
}

#[test]
fn zero_steps_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles { dir: dir.path().into() };
    let data = PairSet::synthetic(1, 8, 0).unwrap();
    let mut model = tiny_model(1);
    let cfg = tiny_config(0);
    let mut state = TrainState::new(&model, &cfg);
    let r = train(&mut model, &data, &data, &cfg, &mut state, Some(&files)).unwrap();
    assert!(r.losses.is_empty());
    let back = load_checkpoint(files.checkpoint()).unwrap();
    for (a, b) in back.store.params().iter().zip(tiny_model(1).store.params()) {
        assert_eq!(a.value.data(), b.value.data());
    }
    assert_eq!(TrainState::load(files.state()).unwrap(), state);
}

#[test]
fn state_file_round_trip_and_corruption() {
    let model = tiny_model(2);
    let mut state = TrainState::new(&model, &TrainConfig::default());
    state.step = 41;
    state.adam.t = 41;
    state.adam.m[3][0] = 0.25;
    state.plateau.best = Some(27.5);
    state.plateau.bad = 2;
    let bytes = state.encode();
    assert_eq!(&bytes[..4], b"TFS1");
    assert_eq!(TrainState::decode(&bytes).unwrap(), state);
    assert!(TrainState::decode(&bytes[..bytes.len() - 3]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(TrainState::decode(&extra).is_err());
    assert!(TrainState::decode(b"nope").is_err());
}

#[test]
fn invalid_config_names_field() {
    let mut cfg = TrainConfig::default();
    let err = cfg.set("batch_size", "many").unwrap_err();
    assert!(err.to_string().contains("batch_size"));
    cfg.set("lr", "-1").unwrap();
    let err = cfg.validate().unwrap_err();
    assert!(err.to_string().contains("`lr`") && err.to_string().contains("real > 0"), "{err}");
    assert!(TrainConfig::default().set("nonsense", "1").is_err());
}

proptest! {
    #[test]
    fn lcc_distance_is_a_metric(
        a in prop::collection::vec(-1.0f64..2.0, 12),
        b in prop::collection::vec(-1.0f64..2.0, 12),
        c in prop::collection::vec(-1.0f64..2.0, 12),
    ) {
        let t = |d: Vec<f64>| Tensor::from_vec(vec![3, 2, 2], d).unwrap();
        let (x, y, z) = (t(a), t(b), t(c));
        let d = |p: &Tensor, q: &Tensor| lcc_distance(p, q).unwrap().item();
        prop_assert!((d(&x, &y) - d(&y, &x)).abs() <= 1e-12);
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
        prop_assert!(d(&x, &y) >= 0.0);
    }

    #[test]
    fn total_loss_is_nonnegative_and_zero_only_at_target(
        gt in prop::collection::vec(0.0f64..1.0, 12),
        rec in prop::collection::vec(0.0f64..1.0, 12),
        lambda in 0.01f64..2.0,
    ) {
        let t = |d: Vec<f64>| Tensor::from_vec(vec![3, 2, 2], d).unwrap();
        let (g, r) = (t(gt), t(rec));
        let loss = total_loss(&g, &r, &r, lambda).unwrap().item();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, g.data() == r.data());
        prop_assert_eq!(total_loss(&g, &g, &g, lambda).unwrap().item(), 0.0);
    }
}
