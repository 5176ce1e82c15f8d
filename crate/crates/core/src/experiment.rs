//! Experiment drivers shared by the command line tool, the benches and the
//! acceptance suite.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{logic_dataset, Sample};
use crate::defects::SweepArchitecture;
use crate::device::{weight_range, DeviceModel, Mode};
use crate::error::Result;
use crate::mapping::{
    bound_targets, compute_theta, map_matrix, map_with_dummy, map_with_dummy_clamped, target_interval, BoxBounds,
};
use crate::network::{effective_weights, Activation, Encoding, Layer, LayerConfig, Mlp};
use crate::stats;
use crate::training::{
    encode_with_bias, perceptron_errors, perceptron_train, train, PerceptronConfig, Rule, TrainConfig, TrainReport,
};

// ---------------------------------------------------------------------------
// Logic-gate mapping study

/// Ways of putting perceptron targets on hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingVariant {
    /// The unconstrained target matrix itself.
    Target,
    /// Column projection and clamping, no dummy row.
    Naive,
    /// Dummy row appended to unbounded targets, then forced into the box.
    Dummy,
    /// Targets clipped to the dummy-safe interval, then copied exactly.
    BoundedDummy,
}

impl MappingVariant {
    pub const ALL: [MappingVariant; 4] = [Self::Target, Self::Naive, Self::Dummy, Self::BoundedDummy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Target => "target",
            Self::Naive => "naive",
            Self::Dummy => "dummy",
            Self::BoundedDummy => "bounded-dummy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicMapConfig {
    pub perceptron: PerceptronConfig,
    /// Initial value of every target weight.
    pub init: f64,
    /// Box the crossbar weights must lie in.
    pub bounds: BoxBounds,
}

impl Default for LogicMapConfig {
    fn default() -> Self {
        Self {
            perceptron: PerceptronConfig::default(),
            init: 0.5,
            bounds: BoxBounds::unit(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedVariant {
    pub variant: MappingVariant,
    /// Crossbar weights; the dummy row, when present, is last.
    pub weights: Array2<f64>,
    /// Misclassified patterns out of four.
    pub errors: usize,
    pub error_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicMapReport {
    pub perceptron_epochs: usize,
    pub variants: Vec<MappedVariant>,
}

impl LogicMapReport {
    pub fn variant(&self, v: MappingVariant) -> &MappedVariant {
        self.variants
            .iter()
            .find(|m| m.variant == v)
            .expect("every variant is reported")
    }
}

/// Column labels of the logic crossbar: true and negated copies of each
/// input and of the constant bias input.
pub const LOGIC_COLUMNS: [&str; 6] = ["u1", "-u1", "u2", "-u2", "b", "-b"];

/// Logic patterns encoded for the crossbar (differential, with bias) paired
/// with AND/OR targets.
pub fn logic_encoded() -> Vec<(Array1<f64>, Array1<f64>)> {
    logic_dataset()
        .into_iter()
        .map(|s| (encode_with_bias(s.input.view(), Encoding::Differential, true), s.target))
        .collect()
}

/// Train AND/OR target weights with the perceptron rule, map them onto a
/// current-mode crossbar three ways and count misclassified patterns.
pub fn logic_map(config: &LogicMapConfig) -> Result<LogicMapReport> {
    let data = logic_encoded();
    let outputs = data[0].1.len();
    let columns = data[0].0.len();
    let trained = perceptron_train(
        Array2::from_elem((outputs, columns), config.init),
        &data,
        &config.perceptron,
    )?;
    let targets = trained.weights;

    let naive = map_matrix(&targets, config.bounds)?.weights;
    let dummy = map_with_dummy_clamped(&targets, config.bounds)?.weights;
    let bounded = bound_targets(&targets, config.bounds, outputs + 1)?;
    let bounded_dummy = map_with_dummy(&bounded, config.bounds)?.weights;

    let variants = [
        (MappingVariant::Target, targets.wbar.clone()),
        (MappingVariant::Naive, naive),
        (MappingVariant::Dummy, dummy),
        (MappingVariant::BoundedDummy, bounded_dummy),
    ]
    .into_iter()
    .map(|(variant, weights)| {
        let errors = perceptron_errors(&weights.slice(s![..outputs, ..]).to_owned(), &data);
        MappedVariant {
            variant,
            weights,
            errors,
            error_rate: errors as f64 / data.len() as f64,
        }
    })
    .collect();
    Ok(LogicMapReport {
        perceptron_epochs: trained.epochs,
        variants,
    })
}

// ---------------------------------------------------------------------------
// Logic-gate gradient descent

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicTrainConfig {
    pub alpha: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Neuron gain of the output units.
    pub gain: f64,
    pub device: DeviceModel,
}

impl Default for LogicTrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            epochs: 200,
            seed: 7,
            gain: 4.0,
            device: DeviceModel::default(),
        }
    }
}

/// AND/OR samples with the constant bias input appended.
pub fn logic_samples_with_bias() -> Vec<Sample> {
    logic_dataset()
        .into_iter()
        .map(|mut s| {
            s.input = Array1::from_iter(s.input.iter().copied().chain([1.0]));
            s
        })
        .collect()
}

/// Single-layer AND/OR network on differential inputs (plus bias), with a
/// dummy row in current mode.
pub fn logic_network(mode: Mode, gain: f64, device: DeviceModel, rng: &mut ChaCha8Rng) -> Result<Mlp> {
    let mut cfg = LayerConfig::new(mode, Encoding::Differential, Activation::Sigmoid).with_gain(gain);
    if mode == Mode::CurrentMode {
        cfg = cfg.with_dummy_row();
    }
    Mlp::new(vec![Layer::random(cfg, 3, 2, device, rng)?])
}

pub fn default_rule(mode: Mode) -> Rule {
    match mode {
        Mode::VoltageMode => Rule::Standard,
        Mode::CurrentMode => Rule::CurrentSimplified,
    }
}

/// Gradient descent on the AND/OR task from a seeded random initialization.
pub fn logic_train(mode: Mode, rule: Rule, config: &LogicTrainConfig) -> Result<TrainReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mlp = logic_network(mode, config.gain, config.device, &mut rng)?;
    let data = logic_samples_with_bias();
    let mut tc = TrainConfig::new(rule, config.alpha, config.epochs, config.seed);
    tc.shuffle = true;
    train(&mut mlp, &data, None, &tc)
}

// ---------------------------------------------------------------------------
// MNIST multilayer perceptron

/// Per-mode network conventions for the 49-H-10 MNIST experiments.
///
/// Voltage-mode layers get their sign from differential inputs. Current-mode
/// layers use a dummy row and subtract `theta * sum(x)`, with `theta` at the
/// middle of the dummy-safe target interval for the layer's row count. Their
/// neuron gain is divided by the half-width of that interval so both modes
/// see effective weights on roughly `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnistArchitecture {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub device: DeviceModel,
    pub epochs: usize,
    pub voltage_alpha: f64,
    pub current_alpha: f64,
    pub current_rule: Rule,
    pub voltage_gain: f64,
    /// Current-mode gain in units of the inverse target-interval half-width.
    pub current_gain: f64,
}

impl Default for MnistArchitecture {
    fn default() -> Self {
        Self {
            inputs: 49,
            hidden: 50,
            outputs: 10,
            device: DeviceModel::default(),
            epochs: 10,
            voltage_alpha: 0.05,
            current_alpha: 2e-4,
            current_rule: Rule::CurrentSimplified,
            voltage_gain: 2.5,
            current_gain: 1.0,
        }
    }
}

/// Functional-row conductance that, with the dummy row at `g_max`, puts every
/// current-mode weight exactly at `theta`.
fn centered_conductance(device: &DeviceModel, rows: usize, theta: f64) -> f64 {
    theta * device.g_max / (1.0 - (rows - 1) as f64 * theta)
}

impl MnistArchitecture {
    /// Dummy-safe target interval of a current-mode layer with `rows`
    /// crossbar rows including the dummy.
    pub fn current_interval(&self, rows: usize) -> Result<(f64, f64)> {
        target_interval(BoxBounds::for_device(&self.device, rows)?, rows)
    }

    pub fn current_layer(&self, rows: usize) -> Result<LayerConfig> {
        let (lo, hi) = self.current_interval(rows)?;
        Ok(
            LayerConfig::new(Mode::CurrentMode, Encoding::Unipolar, Activation::Sigmoid)
                .with_dummy_row()
                .with_theta(compute_theta(lo, hi))
                .with_gain(self.current_gain * 2.0 / (hi - lo)),
        )
    }

    pub fn voltage_layer(&self) -> LayerConfig {
        LayerConfig::new(Mode::VoltageMode, Encoding::Differential, Activation::Sigmoid).with_gain(self.voltage_gain)
    }

    fn layer(&self, mode: Mode, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Result<Layer> {
        match mode {
            Mode::VoltageMode => Layer::random(self.voltage_layer(), inputs, outputs, self.device, rng),
            Mode::CurrentMode => {
                // Uniform init would put every weight near 1/M, well above
                // theta, and saturate the neurons. Draw functional rows
                // around the conductance that zeroes the effective weight.
                let rows = outputs + 1;
                let cfg = self.current_layer(rows)?;
                let centre = centered_conductance(&self.device, rows, cfg.theta);
                let lo = self.device.g_min;
                let hi = (2.0 * centre - lo).min(self.device.g_max);
                let mut g = Array2::from_shape_simple_fn((rows, inputs), || rng.gen_range(lo..=hi));
                g.row_mut(outputs).fill(self.device.g_max);
                Layer::new(cfg, g, self.device)
            }
        }
    }

    /// Fresh randomly initialized network.
    pub fn network(&self, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Mlp> {
        let hidden = self.layer(mode, self.inputs, self.hidden, rng)?;
        let output = self.layer(mode, self.hidden, self.outputs, rng)?;
        Mlp::new(vec![hidden, output])
    }

    pub fn train_config_for(&self, mode: Mode) -> TrainConfig {
        match mode {
            Mode::VoltageMode => TrainConfig::new(Rule::Standard, self.voltage_alpha, self.epochs, 0),
            Mode::CurrentMode => TrainConfig::new(self.current_rule, self.current_alpha, self.epochs, 0),
        }
    }

    /// Range of hidden-layer effective weights the hardware can express.
    pub fn hidden_effective_range(&self, mode: Mode) -> Result<(f64, f64)> {
        let g = self.device.ratio();
        match mode {
            Mode::VoltageMode => Ok((-(1.0 - g), 1.0 - g)),
            Mode::CurrentMode => {
                let rows = self.hidden + 1;
                let (lo, hi) = weight_range(Mode::CurrentMode, rows, g)?;
                let theta = self.current_layer(rows)?.theta;
                Ok((lo - theta, hi - theta))
            }
        }
    }
}

impl SweepArchitecture for MnistArchitecture {
    fn build(&self, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Mlp> {
        self.network(mode, rng)
    }

    fn train_config(&self, mode: Mode) -> TrainConfig {
        self.train_config_for(mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistRun {
    pub mode: Mode,
    pub report: TrainReport,
    pub network: Mlp,
}

/// Train one MNIST network and record test accuracy after every epoch.
pub fn mnist_run(
    arch: &MnistArchitecture,
    mode: Mode,
    train_set: &[Sample],
    test_set: &[Sample],
    seed: u64,
) -> Result<MnistRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut network = arch.network(mode, &mut rng)?;
    let mut cfg = arch.train_config_for(mode);
    cfg.seed = seed;
    let report = train(&mut network, train_set, Some(test_set), &cfg)?;
    Ok(MnistRun { mode, report, network })
}

// ---------------------------------------------------------------------------
// Weight distributions

pub const HISTOGRAM_BINS: usize = 41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogram {
    pub mode: Mode,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub fn flatten(w: ArrayView2<'_, f64>) -> Vec<f64> {
    w.iter().copied().collect()
}

/// Histogram and shape statistics of the first layer's effective weights.
pub fn hidden_histogram(arch: &MnistArchitecture, run: &MnistRun) -> Result<WeightHistogram> {
    let values = flatten(effective_weights(&run.network.layers()[0]).view());
    let (lo, hi) = arch.hidden_effective_range(run.mode)?;
    Ok(WeightHistogram {
        mode: run.mode,
        edges: stats::bin_edges(lo, hi, HISTOGRAM_BINS),
        counts: stats::histogram(&values, lo, hi, HISTOGRAM_BINS),
        skewness: stats::skewness(&values),
        excess_kurtosis: stats::excess_kurtosis(&values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logic_map_error_rates() {
        let report = logic_map(&LogicMapConfig::default()).unwrap();
        let rate = |v| report.variant(v).error_rate;
        assert_eq!(rate(MappingVariant::Target), 0.0);
        assert_eq!(rate(MappingVariant::Naive), 0.5);
        assert_eq!(rate(MappingVariant::Dummy), 0.25);
        assert_eq!(rate(MappingVariant::BoundedDummy), 0.0);
    }

    #[test]
    fn mapped_logic_columns_sum_to_one() {
        let report = logic_map(&LogicMapConfig::default()).unwrap();
        for v in [
            MappingVariant::Naive,
            MappingVariant::Dummy,
            MappingVariant::BoundedDummy,
        ] {
            let w = &report.variant(v).weights;
            for col in w.columns() {
                assert!((col.sum() - 1.0).abs() < 1e-12);
                assert!(col.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn mnist_architecture_shapes() {
        let arch = MnistArchitecture::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = arch.network(Mode::VoltageMode, &mut rng).unwrap();
        assert_eq!(v.layers()[0].xbar.conductances().dim(), (50, 98));
        assert_eq!(v.layers()[1].xbar.conductances().dim(), (10, 100));
        let c = arch.network(Mode::CurrentMode, &mut rng).unwrap();
        assert_eq!(c.layers()[0].xbar.conductances().dim(), (51, 49));
        assert_eq!(c.layers()[1].xbar.conductances().dim(), (11, 50));
        assert_eq!(c.input_dim(), 49);
        assert_eq!(c.output_dim(), 10);
        let (lo, hi) = arch.hidden_effective_range(Mode::CurrentMode).unwrap();
        assert!(lo < 0.0 && hi > 0.0);
    }
}
