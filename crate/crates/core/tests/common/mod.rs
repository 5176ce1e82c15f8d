#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xbar_core::dataset::{MnistFiles, Sample};
use xbar_core::defects::inject_network;
use xbar_core::device::{weights_current, CrossbarState, DeviceModel, Mode, WeightMatrix};
use xbar_core::mapping::{bound_targets, map_matrix, map_with_dummy, recover_conductances, BoxBounds, TargetWeights};
use xbar_core::network::{mlp_forward, Activation, Encoding, Layer, LayerConfig, Mlp};
use xbar_core::training::{
    apply_step, backprop_step, loss_gradient, sample_loss, train, weight_grad_exact, Rule, TrainConfig,
};

/// Minimizer of `|w - p|^2` subject to `sum w = 1`, `lo <= w <= hi`, found by
/// enumerating every assignment of each coordinate to lower bound, upper
/// bound or free.
pub fn qp_oracle(p: &[f64], lo: f64, hi: f64) -> Option<Vec<f64>> {
    let m = p.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut state = vec![0u8; m];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let fixed: f64 = state
            .iter()
            .map(|&s| match s {
                0 => lo,
                1 => hi,
                _ => 0.0,
            })
            .sum();
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 2).collect();
        let w: Vec<f64> = if free.is_empty() {
            if (fixed - 1.0).abs() > 1e-12 {
                continue;
            }
            state.iter().map(|&s| if s == 0 { lo } else { hi }).collect()
        } else {
            let rest: f64 = free.iter().map(|&i| p[i]).sum();
            let shift = (1.0 - fixed - rest) / free.len() as f64;
            (0..m)
                .map(|i| match state[i] {
                    0 => lo,
                    1 => hi,
                    _ => p[i] + shift,
                })
                .collect()
        };
        if w.iter().any(|&v| v < lo - 1e-12 || v > hi + 1e-12) {
            continue;
        }
        let obj: f64 = w.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, w));
        }
    }
    best.map(|(_, w)| w)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// A device with a wide range so finite-difference probes never clip.
pub fn wide_device() -> DeviceModel {
    DeviceModel::new(1e-6, 1.0, 0.5).unwrap()
}

pub fn random_current(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CrossbarState {
    CrossbarState::random(rows, cols, Mode::CurrentMode, false, 0.0, DeviceModel::default(), rng).unwrap()
}

/// Worst relative error between `weight_grad_exact` and a central difference
/// of `weights_current` over every `(i, j, k)` of a random crossbar.
pub fn weight_grad_worst(rng: &mut ChaCha8Rng) -> f64 {
    let device = DeviceModel::default();
    let rows = rng.gen_range(2..=6);
    let cols = rng.gen_range(1..=4);
    let g = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(device.g_min..=device.g_max));
    let xbar = CrossbarState::new(g.clone(), Mode::CurrentMode, false, 0.0, device).unwrap();
    let wide = wide_device();
    let mut worst: f64 = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let h = 1e-6 * g[[i, j]];
            let w_at = |delta: f64| {
                let mut gp = g.clone();
                gp[[i, j]] += delta;
                let x = CrossbarState::new(gp, Mode::CurrentMode, false, 0.0, wide).unwrap();
                weights_current(&x).unwrap().weights
            };
            let (plus, minus) = (w_at(h), w_at(-h));
            for k in 0..rows {
                let fd = (plus[[k, j]] - minus[[k, j]]) / (2.0 * h);
                let exact = weight_grad_exact(&xbar, i, j, k).unwrap();
                worst = worst.max(rel_err(exact, fd, 1e-3));
            }
        }
    }
    worst
}

/// Small current-mode network on the wide device with conductances away
/// from the bounds.
pub fn small_current_mlp(rng: &mut ChaCha8Rng, dims: &[usize], dummy: bool) -> Mlp {
    let device = wide_device();
    let layers = dims
        .windows(2)
        .map(|d| {
            let mut cfg = LayerConfig::new(Mode::CurrentMode, Encoding::Unipolar, Activation::Sigmoid).with_gain(3.0);
            if dummy {
                cfg = cfg.with_dummy_row().with_theta(0.2);
            }
            let rows = d[1] + usize::from(dummy);
            let g = Array2::from_shape_simple_fn((rows, d[0]), || rng.gen_range(0.05..0.95));
            Layer::new(cfg, g, device).unwrap()
        })
        .collect();
    Mlp::new(layers).unwrap()
}

pub fn random_sample(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Sample {
    Sample {
        input: Array1::from_shape_simple_fn(inputs, || rng.gen_range(0.0..1.0)),
        target: Array1::from_shape_simple_fn(outputs, || rng.gen_range(0.0..1.0)),
        label: None,
    }
}

fn loss(mlp: &Mlp, s: &Sample) -> f64 {
    sample_loss(
        mlp_forward(mlp, s.input.view()).unwrap().output().view(),
        s.target.view(),
    )
}

/// Worst relative error between `loss_gradient` and central differences of
/// the full per-sample loss over every conductance of a random network.
pub fn network_grad_worst(rng: &mut ChaCha8Rng, dims: &[usize], dummy: bool) -> f64 {
    let mlp = small_current_mlp(rng, dims, dummy);
    let sample = random_sample(rng, dims[0], *dims.last().unwrap());
    let grads = loss_gradient(&mlp, &sample).unwrap();
    let scale = grads.iter().flat_map(|g| g.iter()).fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut worst: f64 = 0.0;
    for (l, grad) in grads.iter().enumerate() {
        for ((i, j), &analytic) in grad.indexed_iter() {
            let g0 = mlp.layers()[l].xbar.conductances()[[i, j]];
            let h = 1e-5 * g0;
            let at = |delta: f64| {
                let mut m = mlp.clone();
                m.layers_mut()[l].xbar.set(i, j, g0 + delta);
                loss(&m, &sample)
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic, fd, 1e-3 * scale));
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Structural invariants, seeded so they can run both under proptest and as a
// fixed acceptance batch.

pub type Check = Result<(), String>;

pub fn check_column_sums(rng: &mut ChaCha8Rng) -> Check {
    let rows = rng.gen_range(1..=12);
    let cols = rng.gen_range(1..=12);
    let w = weights_current(&random_current(rng, rows, cols)).unwrap().weights;
    for (j, col) in w.columns().into_iter().enumerate() {
        if (col.sum() - 1.0).abs() >= 1e-9 {
            return Err(format!("column {j} sums to {}", col.sum()));
        }
    }
    Ok(())
}

/// Training with large random steps never leaves the device range, and stuck
/// devices stay bit-identical.
pub fn check_clipping_and_defects(rng: &mut ChaCha8Rng) -> Check {
    let device = DeviceModel::default();
    let mut layers = Vec::new();
    for (inputs, outputs) in [(4, 5), (5, 3)] {
        let cfg = LayerConfig::new(Mode::CurrentMode, Encoding::Unipolar, Activation::Sigmoid)
            .with_dummy_row()
            .with_theta(0.1)
            .with_gain(5.0);
        layers.push(Layer::random(cfg, inputs, outputs, device, rng).unwrap());
    }
    let mut mlp = Mlp::new(layers).unwrap();
    inject_network(&mut mlp, rng.gen_range(0.1..0.6), rng).unwrap();
    let before: Vec<_> = mlp.layers().iter().map(|l| l.defects.clone().unwrap()).collect();
    let rule = if rng.gen_bool(0.5) {
        Rule::CurrentExact
    } else {
        Rule::CurrentSimplified
    };
    let cfg = TrainConfig::new(rule, rng.gen_range(1.0..50.0), 1, 0);
    for _ in 0..20 {
        let s = random_sample(rng, 4, 3);
        let steps = backprop_step(&mlp, &s, &cfg).unwrap();
        apply_step(&mut mlp, &steps).unwrap();
        for (l, layer) in mlp.layers().iter().enumerate() {
            let g = layer.xbar.conductances();
            if g.iter().any(|&v| !(v >= device.g_min && v <= device.g_max)) {
                return Err(format!("layer {l} left the device range"));
            }
            if !before[l].is_respected(&layer.xbar) {
                return Err(format!("layer {l} changed a stuck device"));
            }
        }
    }
    Ok(())
}

/// `recover_conductances` then `weights_current` is the identity on a
/// feasible weight matrix.
pub fn check_round_trip(rng: &mut ChaCha8Rng) -> Check {
    let device = DeviceModel::default();
    let rows = rng.gen_range(2..=8);
    let cols = rng.gen_range(1..=6);
    let w = weights_current(&random_current(rng, rows, cols)).unwrap();
    let g = recover_conductances(&w, &device).map_err(|e| e.to_string())?;
    let back = weights_current(&CrossbarState::new(g, Mode::CurrentMode, false, 0.0, device).unwrap()).unwrap();
    let err = (&back.weights - &w.weights).iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if err > 1e-9 {
        return Err(format!("round trip error {err:e}"));
    }
    Ok(())
}

/// Bounded targets copied through a dummy row stay in the box and sum to 1.
pub fn check_bounded_dummy(rng: &mut ChaCha8Rng) -> Check {
    let device = DeviceModel::default();
    let functional = rng.gen_range(1..=6);
    let m = functional + 1;
    let bounds = BoxBounds::for_device(&device, m).unwrap();
    let wbar = Array2::from_shape_simple_fn((functional, rng.gen_range(1..=5)), || rng.gen_range(-1.0..2.0));
    let targets = TargetWeights::from_matrix(wbar).unwrap();
    let mapped = map_with_dummy(&bound_targets(&targets, bounds, m).unwrap(), bounds).map_err(|e| e.to_string())?;
    for col in mapped.weights.columns() {
        if (col.sum() - 1.0).abs() > 1e-12 {
            return Err(format!("column sums to {}", col.sum()));
        }
        if col
            .iter()
            .any(|&v| v < bounds.w_min - 1e-15 || v > bounds.w_max + 1e-15)
        {
            return Err("weight outside box".into());
        }
    }
    Ok(())
}

pub fn check_idempotence(rng: &mut ChaCha8Rng) -> Check {
    let m = rng.gen_range(2..=6);
    let wbar = Array2::from_shape_simple_fn((m, 3), || rng.gen_range(-1.0..2.0));
    let bounds = BoxBounds::unit();
    let once = map_matrix(&TargetWeights::from_matrix(wbar).unwrap(), bounds).unwrap();
    let twice = map_matrix(&TargetWeights::from_matrix(once.weights.clone()).unwrap(), bounds).unwrap();
    let err = (&once.weights - &twice.weights)
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    if err > 1e-12 {
        return Err(format!("second mapping moved weights by {err:e}"));
    }
    Ok(())
}

/// Identical seeds give bit-identical training reports.
pub fn check_determinism(rng: &mut ChaCha8Rng) -> Check {
    let seed = rng.gen();
    let run = || {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = small_current_mlp(&mut r, &[3, 4, 2], true);
        inject_network(&mut mlp, 0.3, &mut r).unwrap();
        let data: Vec<Sample> = (0..8).map(|_| random_sample(&mut r, 3, 2)).collect();
        let cfg = TrainConfig::new(Rule::CurrentSimplified, 0.5, 3, seed);
        train(&mut mlp, &data, Some(&data), &cfg).unwrap()
    };
    if run() != run() {
        return Err("two identical runs differ".into());
    }
    Ok(())
}

pub fn weight_matrix_in_range(w: &WeightMatrix, lo: f64, hi: f64) -> bool {
    w.weights
        .iter()
        .all(|&v| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12))
}

/// MNIST directory from `XBAR_DATA_DIR`, falling back to the workspace
/// `data/mnist`.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("XBAR_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    MnistFiles::in_dir(&dir).exist().then_some(dir)
}
