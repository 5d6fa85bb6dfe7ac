mod support;

use stmlp_core::data::{make_samples, synth_gestures, Sample, SynthOptions};
use stmlp_core::model::ModelConfig;
use stmlp_core::optim::{
    self, adam_step, batch_gradient, ranger_step, Hyper, LrSchedule, OptimState, OptimizerKind, RadamBranch,
    TrainOptions,
};
use stmlp_core::ModelParams;
use support::*;

/// Gradient of `½ Σ a_i (w_i − c_i)²`.
fn quad_grad(w: &[f64], a: &[f64], c: &[f64]) -> Vec<f64> {
    w.iter().zip(a).zip(c).map(|((w, a), c)| a * (w - c)).collect()
}

const CURV: [f64; 3] = [1.0, 4.0, 0.25];
const TARGET: [f64; 3] = [0.5, -1.5, 2.0];

fn run_quadratic(kind: OptimizerKind, hyper: Hyper, steps: usize, lr: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut w = vec![0.0; 3];
    let mut st = OptimState::new(kind, &[&w], hyper);
    for i in 0..steps {
        let g = quad_grad(&w, &CURV, &TARGET);
        st.step(&mut [&mut w], &[&g], lr(i)).unwrap();
    }
    w
}

fn cosine(steps: usize, base: f64) -> impl Fn(usize) -> f64 {
    move |i| 0.5 * base * (1.0 + (std::f64::consts::PI * i as f64 / (steps - 1) as f64).cos())
}

#[test]
fn adam_first_step_matches_hand_computation() {
    // f(w) = w², w = 1, g = 2
    let lr = 0.1;
    let mut w = vec![1.0];
    let mut st = OptimState::new(OptimizerKind::Adam, &[&w], Hyper::default());
    adam_step(&mut st, &mut [&mut w], &[&[2.0]], lr).unwrap();
    let (m, v) = (0.1 * 2.0, 0.001 * 4.0);
    let (m_hat, v_hat) = (m / (1.0 - 0.9), v / (1.0 - 0.999));
    let want = 1.0 - lr * m_hat / (f64::sqrt(v_hat) + 1e-8);
    assert!((w[0] - want).abs() < 1e-15);
    assert!(((1.0 - w[0]) - lr).abs() < 1e-8);

    // second step, still by hand
    let g2 = 2.0 * w[0];
    adam_step(&mut st, &mut [&mut w], &[&[g2]], lr).unwrap();
    let (m2, v2) = (0.9 * m + 0.1 * g2, 0.999 * v + 0.001 * g2 * g2);
    let want2 = want - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
    assert!((w[0] - want2).abs() < 1e-15);
}

#[test]
fn adam_converges_on_a_quadratic() {
    let w = run_quadratic(OptimizerKind::Adam, Hyper::default(), 200, cosine(200, 0.1));
    for (a, b) in w.iter().zip(TARGET) {
        assert!((a - b).abs() <= 1e-3, "{w:?}");
    }
}

#[test]
fn ranger_converges_on_a_quadratic() {
    let w = run_quadratic(OptimizerKind::Ranger, Hyper::default(), 200, cosine(200, 0.8));
    for (a, b) in w.iter().zip(TARGET) {
        assert!((a - b).abs() <= 1e-3, "{w:?}");
    }
}

/// Plain RAdam, written out independently.
fn radam_reference(steps: usize, lr: f64) -> (Vec<f64>, Vec<RadamBranch>) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    let mut w = vec![0.0; 3];
    let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
    let mut branches = Vec::new();
    for t in 1..=steps {
        let g = quad_grad(&w, &CURV, &TARGET);
        let b2t = b2.powi(t as i32);
        let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        for i in 0..3 {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        }
        let m_hat: Vec<f64> = m.iter().map(|x| x / (1.0 - b1.powi(t as i32))).collect();
        if rho >= 5.0 {
            let r = ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt();
            for i in 0..3 {
                let v_hat = v[i] / (1.0 - b2t);
                w[i] -= lr * r * m_hat[i] / (v_hat.sqrt() + eps);
            }
            branches.push(RadamBranch::Rectified);
        } else {
            for i in 0..3 {
                w[i] -= lr * m_hat[i];
            }
            branches.push(RadamBranch::Momentum);
        }
    }
    (w, branches)
}

#[test]
fn ranger_without_lookahead_is_radam() {
    let hyper = Hyper { lookahead_k: 1, lookahead_alpha: 1.0, ..Hyper::default() };
    let mut w = vec![0.0; 3];
    let mut st = OptimState::new(OptimizerKind::Ranger, &[&w], hyper);
    let mut branches = Vec::new();
    for _ in 0..40 {
        let g = quad_grad(&w, &CURV, &TARGET);
        branches.push(ranger_step(&mut st, &mut [&mut w], &[&g], 0.01).unwrap());
    }
    let (want, want_branches) = radam_reference(40, 0.01);
    assert_eq!(branches, want_branches);
    assert_eq!(branches[0], RadamBranch::Momentum);
    assert!(branches.contains(&RadamBranch::Rectified));
    for (a, b) in w.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-14, "{w:?} vs {want:?}");
    }
}

#[test]
fn lookahead_pulls_back_every_k_steps() {
    let hyper = Hyper { lookahead_k: 3, lookahead_alpha: 0.5, ..Hyper::default() };
    let mut w = vec![0.0; 3];
    let mut st = OptimState::new(OptimizerKind::Ranger, &[&w], hyper);
    let mut fast = Vec::new();
    for _ in 0..3 {
        let g = quad_grad(&w, &CURV, &TARGET);
        let before = w.clone();
        ranger_step(&mut st, &mut [&mut w], &[&g], 0.01).unwrap();
        fast.push((before, w.clone()));
    }
    // after step 3 the weights sit halfway between the start (0) and where
    // the fast weights would have gone
    let (_, ref last) = fast[2];
    assert_eq!(st.slow_weights.as_ref().unwrap()[0], *last);
    let mut replay = vec![0.0; 3];
    let mut radam = OptimState::new(OptimizerKind::Ranger, &[&replay], Hyper { lookahead_k: 0, ..hyper });
    for _ in 0..3 {
        let g = quad_grad(&replay, &CURV, &TARGET);
        ranger_step(&mut radam, &mut [&mut replay], &[&g], 0.01).unwrap();
    }
    for (a, b) in last.iter().zip(&replay) {
        assert!((a - 0.5 * b).abs() <= 1e-15);
    }
}

#[test]
fn updates_do_not_depend_on_tensor_order() {
    for kind in [OptimizerKind::Adam, OptimizerKind::Ranger] {
        let mut r = rng(3);
        let tensors: Vec<Vec<f64>> = vec![rand_vec(&mut r, 4), rand_vec(&mut r, 1), rand_vec(&mut r, 3)];
        let grads: Vec<Vec<Vec<f64>>> =
            (0..8).map(|_| vec![rand_vec(&mut r, 4), rand_vec(&mut r, 1), rand_vec(&mut r, 3)]).collect();
        let run = |order: &[usize]| -> Vec<Vec<f64>> {
            let mut ps: Vec<Vec<f64>> = order.iter().map(|&i| tensors[i].clone()).collect();
            let views: Vec<&[f64]> = ps.iter().map(|p| p.as_slice()).collect();
            let mut st = OptimState::new(kind, &views, Hyper::default());
            for g in &grads {
                let gs: Vec<&[f64]> = order.iter().map(|&i| g[i].as_slice()).collect();
                let mut pm: Vec<&mut [f64]> = ps.iter_mut().map(|p| p.as_mut_slice()).collect();
                st.step(&mut pm, &gs, 0.05).unwrap();
            }
            let mut back = vec![Vec::new(); order.len()];
            for (pos, &i) in order.iter().enumerate() {
                back[i] = ps[pos].clone();
            }
            back
        };
        assert_eq!(run(&[0, 1, 2]), run(&[2, 0, 1]));
    }
}

#[test]
fn shape_mismatch_is_rejected() {
    let mut w = vec![0.0; 2];
    let mut st = OptimState::new(OptimizerKind::Adam, &[&w], Hyper::default());
    assert!(adam_step(&mut st, &mut [&mut w], &[&[1.0]], 0.1).is_err());
    let mut st = OptimState::new(OptimizerKind::Adam, &[&w], Hyper::default());
    assert!(ranger_step(&mut st, &mut [&mut w], &[&[1.0, 1.0]], 0.1).is_err());
}

#[test]
fn tcg_schedule() {
    let s = LrSchedule::tcg();
    for e in 0..50 {
        assert!((s.lr_at(e).unwrap() - 0.001).abs() <= 1e-9);
    }
    assert!((s.lr_at(69).unwrap() - 0.0001).abs() <= 1e-9);
    let lrs: Vec<f64> = (0..70).map(|e| s.lr_at(e).unwrap()).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!(lrs[69] >= s.final_lr - 1e-12);
    assert!(s.lr_at(70).is_err());
}

#[test]
fn cosine_midpoint_and_monotonicity() {
    let s = LrSchedule { total_epochs: 81, ..LrSchedule::drive_act() };
    assert!((s.lr_at(40).unwrap() - 0.5 * (1e-3 + 1e-4)).abs() <= 1e-9);
    let d = LrSchedule::drive_act();
    assert_eq!(d.lr_at(0).unwrap(), 1e-3);
    assert!((d.lr_at(79).unwrap() - 1e-4).abs() <= 1e-12);
    let lrs: Vec<f64> = (0..80).map(|e| d.lr_at(e).unwrap()).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    // flat-then-cosine midpoint of the decay segment
    let t = LrSchedule::tcg();
    let mid = t.lr_at(50).unwrap() + t.lr_at(69).unwrap();
    assert!((t.lr_at(59).unwrap() + t.lr_at(60).unwrap() - mid).abs() <= 1e-9);
}

fn tiny_samples(n: usize, seed: u64) -> (ModelConfig, Vec<Sample>) {
    let cfg = ModelConfig { joints: 3, time_steps: 6, classes: 3, hidden: 8, ..tiny_config() };
    let seqs = synth_gestures(&SynthOptions {
        classes: 3,
        samples: n,
        joints: 3,
        frames: 6,
        seed,
        ..SynthOptions::default()
    })
    .unwrap();
    (cfg.clone(), make_samples(&cfg, &seqs).unwrap())
}

fn opts(kind: OptimizerKind, epochs: usize, batch: usize, lr: f64) -> TrainOptions {
    TrainOptions {
        epochs,
        batch_size: batch,
        seed: 9,
        optimizer: kind,
        hyper: Hyper::default(),
        schedule: LrSchedule::constant(lr, epochs),
    }
}

#[test]
fn zero_learning_rate_leaves_params() {
    let (cfg, samples) = tiny_samples(3, 1);
    for kind in [OptimizerKind::Adam, OptimizerKind::Ranger] {
        let mut params = ModelParams::init(&cfg, 2).unwrap();
        let before = params.clone();
        optim::train(&cfg, &mut params, &samples, &opts(kind, 1, 1, 0.0), |_| {}).unwrap();
        assert_eq!(params, before);
    }
}

#[test]
fn loss_decreases_over_first_epochs() {
    let (cfg, samples) = tiny_samples(24, 2);
    let mut params = ModelParams::init(&cfg, 3).unwrap();
    let log = optim::train(&cfg, &mut params, &samples, &opts(OptimizerKind::Adam, 5, 8, 1e-3), |_| {}).unwrap();
    let losses: Vec<f64> = log.iter().map(|e| e.mean_loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn same_seed_same_log() {
    let (cfg, samples) = tiny_samples(30, 4);
    let run = || {
        let mut params = ModelParams::init(&cfg, 5).unwrap();
        let mut lines = Vec::new();
        let log = optim::train(&cfg, &mut params, &samples, &opts(OptimizerKind::Ranger, 3, 8, 1e-2), |e| {
            lines.push(e.to_string())
        })
        .unwrap();
        (log, lines, params)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn missing_class_is_a_data_error() {
    let (cfg, samples) = tiny_samples(6, 5);
    let only_two: Vec<Sample> = samples.into_iter().filter(|s| s.label != 2).collect();
    let mut params = ModelParams::init(&cfg, 0).unwrap();
    let err = optim::train(&cfg, &mut params, &only_two, &opts(OptimizerKind::Adam, 1, 2, 1e-3), |_| {});
    assert!(matches!(err, Err(stmlp_core::Error::Data(_))));
}

#[test]
fn batch_gradient_is_the_mean_and_order_free() {
    let (cfg, samples) = tiny_samples(5, 6);
    let params = random_params(&cfg, 7);
    let idx = [0, 1, 2, 3, 4];
    let (g, loss) = batch_gradient(&cfg, &params, &samples, &idx).unwrap();
    let (g_rev, loss_rev) = batch_gradient(&cfg, &params, &samples, &[4, 3, 2, 1, 0]).unwrap();
    let mut sum = ModelParams::zeros(&cfg);
    let mut loss_sum = 0.0;
    for &i in &idx {
        let (gi, li) = batch_gradient(&cfg, &params, &samples, &[i]).unwrap();
        sum.add_scaled(&gi, 0.2);
        loss_sum += li;
    }
    for ((a, b), c) in flat(&g).iter().zip(flat(&sum)).zip(flat(&g_rev)) {
        assert!((a - b).abs() <= 1e-14 && (a - c).abs() <= 1e-14);
    }
    assert!((loss - loss_sum).abs() <= 1e-12 && (loss - loss_rev).abs() <= 1e-12);
}
