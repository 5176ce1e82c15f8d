//! Training rules that act directly on crossbar conductances.
//!
//! All rules minimize `J = 1/2 * sum_k (y_k - t_k)^2` per sample, with
//! `delta_k = -dJ/ds_k` the usual backpropagated error at a neuron input.
//!
//! * [`Rule::Standard`]: plain delta rule on voltage-mode crossbars. Since
//!   `w = G / g_max`, a weight step `dw` is applied as `dG = dw * g_max`.
//! * [`Rule::CurrentExact`]: the true gradient of `J` with respect to the
//!   conductances of a current-mode crossbar, including the coupling through
//!   the column sum. The step for column `c` is scaled by `g_max * S_c`,
//!   which gives `dG[i][c] = alpha * g_max * x_c * (delta_i - sum_k delta_k w[k][c])`
//!   and makes the size comparable with the other rules.
//! * [`Rule::CurrentSimplified`]: the delta rule on every functional row and
//!   the negated mean of the column's functional updates on the dummy row.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::device::{CrossbarState, Mode};
use crate::error::{Error, Result};
use crate::mapping::TargetWeights;
use crate::network::{argmax, effective_weights, mlp_forward, Activation, Encoding, Mlp, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Standard,
    CurrentExact,
    CurrentSimplified,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Standard => "standard",
            Rule::CurrentExact => "current-exact",
            Rule::CurrentSimplified => "current-simplified",
        }
    }

    fn mode(self) -> Mode {
        match self {
            Rule::Standard => Mode::VoltageMode,
            Rule::CurrentExact | Rule::CurrentSimplified => Mode::CurrentMode,
        }
    }
}

/// Dummy-row step of [`Rule::CurrentSimplified`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DummyUpdate {
    /// Negated arithmetic mean of the functional-row steps.
    #[default]
    Mean,
    /// Negated sum, which keeps the column conductance sum fixed.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    pub rule: Rule,
    pub shuffle: bool,
    #[serde(default)]
    pub dummy_update: DummyUpdate,
}

impl TrainConfig {
    pub fn new(rule: Rule, alpha: f64, epochs: usize, seed: u64) -> Self {
        Self {
            alpha,
            epochs,
            seed,
            rule,
            shuffle: true,
            dummy_update: DummyUpdate::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared output error over each epoch's online pass.
    pub mse: Vec<f64>,
    /// Accuracy after each epoch on the evaluation set (or the training set
    /// when none is given).
    pub accuracy: Vec<f64>,
    /// Final conductances, one matrix per layer.
    pub conductances: Vec<Array2<f64>>,
}

/// Per-sample objective `1/2 * sum (y - t)^2`.
pub fn sample_loss(y: ArrayView1<'_, f64>, t: ArrayView1<'_, f64>) -> f64 {
    0.5 * y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// `dw[k][j] / dG[i][j]` for a current-mode crossbar:
/// `(1[k = i] * S_j - G[k][j]) / S_j^2` with `S_j` the column sum.
pub fn weight_grad_exact(xbar: &CrossbarState, i: usize, j: usize, k: usize) -> Result<f64> {
    if xbar.mode() != Mode::CurrentMode {
        return Err(Error::Config("exact weight gradient applies to current mode".into()));
    }
    let (m, n) = xbar.conductances().dim();
    for (index, len) in [(i, m), (k, m), (j, n)] {
        if index >= len {
            return Err(Error::IndexOutOfRange { index, len });
        }
    }
    let col = xbar.conductances().column(j);
    let s = col.sum();
    let own = if k == i { s } else { 0.0 };
    Ok((own - col[k]) / (s * s))
}

/// `delta = -dJ/ds` for every layer, output layer last.
fn backward(mlp: &Mlp, trace: &Trace, target: ArrayView1<'_, f64>) -> Result<Vec<Array1<f64>>> {
    let layers = mlp.layers();
    let y = trace.output();
    if target.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: target.len(),
        });
    }
    let mut deltas = vec![Array1::zeros(0); layers.len()];
    let last = layers.len() - 1;
    let cfg = layers[last].config;
    deltas[last] = Array1::from_shape_fn(y.len(), |i| {
        (target[i] - y[i]) * cfg.activation.derivative(y[i], cfg.gain)
    });
    for l in (0..last).rev() {
        let upstream = effective_weights(&layers[l + 1]).t().dot(&deltas[l + 1]);
        let cfg = layers[l].config;
        let out = &trace.outputs[l];
        deltas[l] = Array1::from_shape_fn(out.len(), |h| upstream[h] * cfg.activation.derivative(out[h], cfg.gain));
    }
    Ok(deltas)
}

fn check_rule(mlp: &Mlp, rule: Rule) -> Result<()> {
    for (l, layer) in mlp.layers().iter().enumerate() {
        if layer.config.mode != rule.mode() {
            return Err(Error::Config(format!(
                "rule {} cannot train {} layer {l}",
                rule.name(),
                layer.config.mode
            )));
        }
        if layer.config.activation == Activation::Step {
            return Err(Error::Config("step activations have no gradient".into()));
        }
    }
    Ok(())
}

/// Column-wise `-sum_k delta_k w[k][c]` over functional rows.
fn column_correction(w: &Array2<f64>, delta: &Array1<f64>) -> Array1<f64> {
    let functional = w.slice(ndarray::s![..delta.len(), ..]);
    -delta.dot(&functional)
}

/// Exact `dJ/dG` for every conductance of every layer, for one sample.
pub fn loss_gradient(mlp: &Mlp, sample: &Sample) -> Result<Vec<Array2<f64>>> {
    let trace = mlp_forward(mlp, sample.input.view())?;
    let deltas = backward(mlp, &trace, sample.target.view())?;
    let mut grads = Vec::with_capacity(deltas.len());
    for ((layer, delta), input) in mlp.layers().iter().zip(&deltas).zip(&trace.inputs) {
        let x = layer.config.input_encoding.encode(input.view());
        let xbar = &layer.xbar;
        let mut g = Array2::zeros(xbar.conductances().dim());
        match xbar.mode() {
            Mode::VoltageMode => {
                let scale = -1.0 / xbar.device().g_max;
                for (i, &d) in delta.iter().enumerate() {
                    g.row_mut(i).assign(&(&x * (d * scale)));
                }
            }
            Mode::CurrentMode => {
                let w = xbar.weights().weights;
                let corr = column_correction(&w, delta);
                let sums = xbar.column_sums();
                for ((i, c), v) in g.indexed_iter_mut() {
                    let own = delta.get(i).copied().unwrap_or(0.0);
                    *v = -x[c] * (own + corr[c]) / sums[c];
                }
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Conductance steps for one online update, before clipping and defect
/// masking.
pub fn backprop_step(mlp: &Mlp, sample: &Sample, config: &TrainConfig) -> Result<Vec<Array2<f64>>> {
    Ok(step(mlp, sample, config)?.0)
}

/// Steps plus the sample's summed squared output error.
fn step(mlp: &Mlp, sample: &Sample, config: &TrainConfig) -> Result<(Vec<Array2<f64>>, f64)> {
    check_rule(mlp, config.rule)?;
    let trace = mlp_forward(mlp, sample.input.view())?;
    let deltas = backward(mlp, &trace, sample.target.view())?;
    let sq_err = 2.0 * sample_loss(trace.output().view(), sample.target.view());

    let mut steps = Vec::with_capacity(deltas.len());
    for ((layer, delta), input) in mlp.layers().iter().zip(&deltas).zip(&trace.inputs) {
        let x = layer.config.input_encoding.encode(input.view());
        let xbar = &layer.xbar;
        let scale = config.alpha * xbar.device().g_max;
        let mut dg = Array2::zeros(xbar.conductances().dim());
        for (i, &d) in delta.iter().enumerate() {
            dg.row_mut(i).assign(&(&x * (scale * d)));
        }
        match config.rule {
            Rule::Standard => {}
            Rule::CurrentSimplified => {
                if let Some(dummy) = xbar.dummy_row() {
                    let functional = dg.slice(ndarray::s![..dummy, ..]).sum_axis(Axis(0));
                    let divisor = match config.dummy_update {
                        DummyUpdate::Mean => dummy as f64,
                        DummyUpdate::Sum => 1.0,
                    };
                    dg.row_mut(dummy).assign(&functional.mapv(|v| -v / divisor));
                }
            }
            Rule::CurrentExact => {
                let w = xbar.weights().weights;
                let corr = column_correction(&w, delta);
                let shared = &x * &corr * scale;
                for mut row in dg.rows_mut() {
                    row += &shared;
                }
            }
        }
        steps.push(dg);
    }
    Ok((steps, sq_err))
}

/// Add steps to every layer, clipping into the device range and leaving
/// stuck devices untouched.
pub fn apply_step(mlp: &mut Mlp, steps: &[Array2<f64>]) -> Result<()> {
    if steps.len() != mlp.layers().len() {
        return Err(Error::DimensionMismatch {
            expected: mlp.layers().len(),
            got: steps.len(),
        });
    }
    for (layer, dg) in mlp.layers_mut().iter_mut().zip(steps) {
        let frozen = layer.defects.as_ref().map(|d| d.stuck.clone());
        layer.xbar.apply_deltas(dg, frozen.as_ref())?;
    }
    Ok(())
}

pub fn is_correct(output: ArrayView1<'_, f64>, sample: &Sample) -> bool {
    match sample.label {
        Some(label) => argmax(output) == label,
        None => output.iter().zip(&sample.target).all(|(&y, &t)| (y > 0.5) == (t > 0.5)),
    }
}

/// `(mse, accuracy)` of `mlp` on `samples`.
pub fn evaluate(mlp: &Mlp, samples: &[Sample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty set".into()));
    }
    let mut sq = 0.0;
    let mut correct = 0usize;
    let mut outputs = 0usize;
    for s in samples {
        let trace = mlp_forward(mlp, s.input.view())?;
        let y = trace.output();
        sq += 2.0 * sample_loss(y.view(), s.target.view());
        outputs += y.len();
        correct += usize::from(is_correct(y.view(), s));
    }
    Ok((sq / outputs as f64, correct as f64 / samples.len() as f64))
}

/// Online training: one update per sample, samples reshuffled every epoch
/// when `config.shuffle` is set.
pub fn train(mlp: &mut Mlp, samples: &[Sample], eval: Option<&[Sample]>, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    check_rule(mlp, config.rule)?;
    if samples.is_empty() {
        return Err(Error::Domain("cannot train on an empty set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        mse: Vec::with_capacity(config.epochs),
        accuracy: Vec::with_capacity(config.epochs),
        conductances: Vec::new(),
    };
    for _ in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sq = 0.0;
        let mut outputs = 0usize;
        for &k in &order {
            let (steps, err) = step(mlp, &samples[k], config)?;
            sq += err;
            outputs += samples[k].target.len();
            apply_step(mlp, &steps)?;
        }
        report.mse.push(sq / outputs as f64);
        let (_, acc) = evaluate(mlp, eval.unwrap_or(samples))?;
        report.accuracy.push(acc);
    }
    report.conductances = mlp.layers().iter().map(|l| l.xbar.conductances().clone()).collect();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptronConfig {
    pub eta: f64,
    pub max_epochs: usize,
    /// Weights are clipped into `[w_min, w_max]` after every update.
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for PerceptronConfig {
    fn default() -> Self {
        Self {
            eta: 0.25,
            max_epochs: 100,
            w_min: 0.0,
            w_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronOutcome {
    pub weights: TargetWeights,
    /// Epochs run, including the final error-free one.
    pub epochs: usize,
    pub converged: bool,
}

fn step_outputs(w: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
    w.dot(x).mapv(|s| Activation::Step.apply(s, 1.0))
}

/// Perceptron learning rule on crossbar-level weights.
///
/// `data` holds already-encoded inputs (one entry per crossbar column) and
/// 0/1 targets per output. After each sample, `w += eta * (t - y) x^T` and
/// the weights are clipped into the configured box. Training stops after the
/// first epoch without errors.
pub fn perceptron_train(
    initial: Array2<f64>,
    data: &[(Array1<f64>, Array1<f64>)],
    config: &PerceptronConfig,
) -> Result<PerceptronOutcome> {
    let mut w = initial;
    for (x, t) in data {
        if x.len() != w.ncols() || t.len() != w.nrows() {
            return Err(Error::DimensionMismatch {
                expected: w.ncols(),
                got: x.len(),
            });
        }
    }
    let mut epochs = 0;
    let mut converged = false;
    while epochs < config.max_epochs {
        epochs += 1;
        let mut errors = 0;
        for (x, t) in data {
            let err = t - &step_outputs(&w, x);
            if err.iter().any(|&e| e != 0.0) {
                errors += 1;
                for (i, &e) in err.iter().enumerate() {
                    w.row_mut(i).scaled_add(config.eta * e, x);
                }
                w.mapv_inplace(|v| v.clamp(config.w_min, config.w_max));
            }
        }
        if errors == 0 {
            converged = true;
            break;
        }
    }
    Ok(PerceptronOutcome {
        weights: TargetWeights::new(w, config.w_min, config.w_max)?,
        epochs,
        converged,
    })
}

/// Number of samples misclassified by step neurons with weights `w` acting
/// on encoded inputs. A sample is wrong when any output is wrong.
pub fn perceptron_errors(w: &Array2<f64>, data: &[(Array1<f64>, Array1<f64>)]) -> usize {
    data.iter().filter(|(x, t)| step_outputs(w, x) != *t).count()
}

/// Encode logical inputs for a crossbar layer, appending a constant bias
/// input when `bias` is set.
pub fn encode_with_bias(x: ArrayView1<'_, f64>, encoding: Encoding, bias: bool) -> Array1<f64> {
    if bias {
        let mut ext = x.to_vec();
        ext.push(1.0);
        encoding.encode(Array1::from(ext).view())
    } else {
        encoding.encode(x)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    use super::*;
    use crate::device::{weights_current, DeviceModel};
    use crate::network::{Layer, LayerConfig};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn current_net(seed: u64, dims: &[usize], dummy: bool) -> Mlp {
        let d = DeviceModel::default();
        let mut r = rng(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let mut cfg = LayerConfig::new(Mode::CurrentMode, Encoding::Unipolar, Activation::Sigmoid)
                    .with_theta(0.3)
                    .with_gain(4.0);
                if dummy {
                    cfg = cfg.with_dummy_row();
                }
                Layer::random(cfg, w[0], w[1], d, &mut r).unwrap()
            })
            .collect();
        Mlp::new(layers).unwrap()
    }

    #[test]
    fn weight_grad_examples() {
        let d = DeviceModel::default();
        let single = CrossbarState::new(array![[5e-4]], Mode::CurrentMode, false, 0.0, d).unwrap();
        assert_eq!(weight_grad_exact(&single, 0, 0, 0).unwrap(), 0.0);

        let c = 4e-4;
        let pair = CrossbarState::new(array![[c], [c]], Mode::CurrentMode, false, 0.0, d).unwrap();
        assert_abs_diff_eq!(
            weight_grad_exact(&pair, 0, 0, 0).unwrap(),
            1.0 / (4.0 * c),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            weight_grad_exact(&pair, 0, 0, 1).unwrap(),
            -1.0 / (4.0 * c),
            epsilon = 1e-9
        );
        assert!(weight_grad_exact(&pair, 2, 0, 0).is_err());
        let v = CrossbarState::new(array![[c]], Mode::VoltageMode, false, 0.0, d).unwrap();
        assert!(weight_grad_exact(&v, 0, 0, 0).is_err());
    }

    #[test]
    fn weight_grad_matches_central_difference() {
        let d = DeviceModel::default();
        let wide = DeviceModel::new(d.g_min / 2.0, d.g_max * 2.0, d.v_th).unwrap();
        let mut r = rng(21);
        for _ in 0..100 {
            let (m, n) = (r.gen_range(1..6), r.gen_range(1..4));
            let x = CrossbarState::random(m, n, Mode::CurrentMode, false, 0.0, d, &mut r).unwrap();
            let (i, j, k) = (r.gen_range(0..m), r.gen_range(0..n), r.gen_range(0..m));
            let h = 1e-9 * d.g_max;
            let w_at = |delta: f64| {
                let mut g = x.conductances().clone();
                g[[i, j]] += delta;
                let p = CrossbarState::new(g, Mode::CurrentMode, false, 0.0, wide).unwrap();
                weights_current(&p).unwrap().weights[[k, j]]
            };
            let fd = (w_at(h) - w_at(-h)) / (2.0 * h);
            let exact = weight_grad_exact(&x, i, j, k).unwrap();
            let scale = exact.abs().max(1.0);
            assert!((fd - exact).abs() / scale < 1e-4, "fd {fd} exact {exact}");
        }
    }

    #[test]
    fn zero_delta_gives_zero_steps() {
        let mlp = current_net(1, &[3, 2], true);
        let trace = mlp_forward(&mlp, array![0.1, 0.2, 0.3].view()).unwrap();
        let sample = Sample {
            input: array![0.1, 0.2, 0.3],
            target: trace.output().clone(),
            label: None,
        };
        let cfg = TrainConfig::new(Rule::CurrentSimplified, 0.5, 1, 0);
        for dg in backprop_step(&mlp, &sample, &cfg).unwrap() {
            assert!(dg.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn delta_rule_arithmetic() {
        // one voltage-mode identity unit: delta = t - y
        let d = DeviceModel::default();
        let cfg = LayerConfig::new(Mode::VoltageMode, Encoding::Unipolar, Activation::Identity);
        let layer = Layer::new(cfg, array![[5e-4]], d).unwrap();
        let mlp = Mlp::new(vec![layer]).unwrap();
        // y = 0.5 * 0.2 = 0.1, so t = 0.6 gives delta = 0.5
        let sample = Sample {
            input: array![0.2],
            target: array![0.6],
            label: None,
        };
        let dg = backprop_step(&mlp, &sample, &TrainConfig::new(Rule::Standard, 0.1, 1, 0)).unwrap();
        assert_abs_diff_eq!(dg[0][[0, 0]] / d.g_max, 0.01, epsilon = 1e-15);
    }

    #[test]
    fn simplified_dummy_is_negated_mean() {
        let mlp = current_net(4, &[5, 4, 3], true);
        let sample = Sample {
            input: array![0.2, 0.9, 0.1, 0.5, 0.7],
            target: array![1.0, 0.0, 0.0],
            label: None,
        };
        let cfg = TrainConfig::new(Rule::CurrentSimplified, 0.3, 1, 0);
        for dg in backprop_step(&mlp, &sample, &cfg).unwrap() {
            let m = dg.nrows() - 1;
            for c in 0..dg.ncols() {
                let sum: f64 = (0..m).map(|i| dg[[i, c]]).sum();
                assert_eq!(dg[[m, c]], -sum / m as f64);
            }
        }
        let sum_cfg = TrainConfig {
            dummy_update: DummyUpdate::Sum,
            ..cfg
        };
        for dg in backprop_step(&mlp, &sample, &sum_cfg).unwrap() {
            for c in 0..dg.ncols() {
                assert_abs_diff_eq!(dg.column(c).sum(), 0.0, epsilon = 1e-18);
            }
        }
    }

    #[test]
    fn rule_mode_mismatch() {
        let mlp = current_net(2, &[2, 2], false);
        let sample = &crate::dataset::logic_dataset()[0];
        let cfg = TrainConfig::new(Rule::Standard, 0.1, 1, 0);
        assert!(matches!(backprop_step(&mlp, sample, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn exact_step_is_scaled_negative_gradient() {
        let mlp = current_net(8, &[3, 3, 2], true);
        let sample = Sample {
            input: array![0.4, -0.2, 0.9],
            target: array![0.0, 1.0],
            label: None,
        };
        let cfg = TrainConfig::new(Rule::CurrentExact, 0.7, 1, 0);
        let steps = backprop_step(&mlp, &sample, &cfg).unwrap();
        let grads = loss_gradient(&mlp, &sample).unwrap();
        for ((dg, g), layer) in steps.iter().zip(&grads).zip(mlp.layers()) {
            let sums = layer.xbar.column_sums();
            let gmax = layer.xbar.device().g_max;
            for ((i, c), &v) in dg.indexed_iter() {
                assert_abs_diff_eq!(v, -cfg.alpha * gmax * sums[c] * g[[i, c]], epsilon = 1e-18);
            }
        }
    }

    #[test]
    fn zero_alpha_keeps_mse_constant() {
        let mut mlp = current_net(3, &[2, 3, 2], true);
        let data = crate::dataset::logic_dataset();
        let cfg = TrainConfig::new(Rule::CurrentSimplified, 0.0, 5, 1);
        let before = mlp.clone();
        let report = train(&mut mlp, &data, None, &cfg).unwrap();
        assert_eq!(report.mse.len(), 5);
        assert_eq!(report.accuracy.len(), 5);
        for m in &report.mse {
            assert_abs_diff_eq!(*m, report.mse[0], epsilon = 1e-12);
        }
        assert_eq!(mlp, before);
    }

    #[test]
    fn perceptron_learns_or_and_leaves_correct_weights() {
        let data: Vec<_> = crate::dataset::logic_dataset()
            .into_iter()
            .map(|s| {
                (
                    encode_with_bias(s.input.view(), Encoding::Differential, true),
                    s.target.slice(ndarray::s![1..]).to_owned(),
                )
            })
            .collect();
        let out = perceptron_train(Array2::from_elem((1, 6), 0.5), &data, &PerceptronConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.epochs <= 100);
        assert_eq!(perceptron_errors(&out.weights.wbar, &data), 0);

        let again = perceptron_train(out.weights.wbar.clone(), &data, &PerceptronConfig::default()).unwrap();
        assert_eq!(again.weights.wbar, out.weights.wbar);
        assert_eq!(again.epochs, 1);
    }
}
