//! Crossbar-backed feedforward layers and multilayer perceptrons.

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::defects::DefectMask;
use crate::device::{matvec, CrossbarState, DeviceModel, Mode};
use crate::error::{Error, Result};

/// How logical inputs are presented to crossbar columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// One column per input.
    Unipolar,
    /// Two columns per input, driven by `x` and `-x`, interleaved
    /// (`x_j` at column `2j`, `-x_j` at `2j + 1`).
    Differential,
}

impl Encoding {
    pub fn columns_per_input(self) -> usize {
        match self {
            Encoding::Unipolar => 1,
            Encoding::Differential => 2,
        }
    }

    pub fn encode(self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match self {
            Encoding::Unipolar => x.to_owned(),
            Encoding::Differential => {
                let mut out = Array1::zeros(2 * x.len());
                for (j, &v) in x.iter().enumerate() {
                    out[2 * j] = v;
                    out[2 * j + 1] = -v;
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Logistic function of `gain * s`.
    Sigmoid,
    /// `gain * s`.
    Identity,
    /// 1 when `s > 0`, else 0; the logistic output thresholded at 0.5.
    Step,
}

impl Activation {
    pub fn apply(self, s: f64, gain: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-gain * s).exp()),
            Activation::Identity => gain * s,
            Activation::Step => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative with respect to `s`, given the activation output `y`.
    pub fn derivative(self, y: f64, gain: f64) -> f64 {
        match self {
            Activation::Sigmoid => gain * y * (1.0 - y),
            Activation::Identity => gain,
            Activation::Step => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub mode: Mode,
    pub input_encoding: Encoding,
    pub use_dummy_row: bool,
    /// Fraction of the summed input subtracted from every output. Current
    /// mode only.
    pub theta: f64,
    pub activation: Activation,
    /// Neuron input gain applied before the activation.
    pub gain: f64,
}

impl LayerConfig {
    pub fn new(mode: Mode, input_encoding: Encoding, activation: Activation) -> Self {
        Self {
            mode,
            input_encoding,
            use_dummy_row: false,
            theta: 0.0,
            activation,
            gain: 1.0,
        }
    }

    pub fn with_dummy_row(mut self) -> Self {
        self.use_dummy_row = true;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode != Mode::CurrentMode {
            if self.theta != 0.0 {
                return Err(Error::Config("theta subtraction requires current mode".into()));
            }
            if self.use_dummy_row {
                return Err(Error::Config("dummy rows require current mode".into()));
            }
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("gain must be positive, got {}", self.gain)));
        }
        Ok(())
    }
}

/// One crossbar plus its neuron configuration and optional defect mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub xbar: CrossbarState,
    pub config: LayerConfig,
    pub defects: Option<DefectMask>,
}

/// Pre-activations and activations of one layer for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub pre: Array1<f64>,
    pub out: Array1<f64>,
}

impl Layer {
    pub fn new(config: LayerConfig, conductances: Array2<f64>, device: DeviceModel) -> Result<Self> {
        config.validate()?;
        let per = config.input_encoding.columns_per_input();
        if !conductances.ncols().is_multiple_of(per) {
            return Err(Error::Config(format!(
                "differential layer needs an even column count, got {}",
                conductances.ncols()
            )));
        }
        let xbar = CrossbarState::new(conductances, config.mode, config.use_dummy_row, config.theta, device)?;
        Ok(Self {
            xbar,
            config,
            defects: None,
        })
    }

    /// A layer with `inputs` logical inputs and `outputs` forwarded outputs,
    /// with conductances drawn uniformly from the device range.
    pub fn random<R: Rng + ?Sized>(
        config: LayerConfig,
        inputs: usize,
        outputs: usize,
        device: DeviceModel,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let rows = outputs + usize::from(config.use_dummy_row);
        let cols = inputs * config.input_encoding.columns_per_input();
        let xbar = CrossbarState::random(rows, cols, config.mode, config.use_dummy_row, config.theta, device, rng)?;
        Ok(Self {
            xbar,
            config,
            defects: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.xbar.cols() / self.config.input_encoding.columns_per_input()
    }

    pub fn outputs(&self) -> usize {
        self.xbar.functional_rows()
    }

    pub fn frozen(&self) -> Option<&Array2<bool>> {
        self.defects.as_ref().map(|d| &d.stuck)
    }
}

/// Logical weights seen by the layer's neurons: `w - theta`, differential
/// column pairs combined as `w+ - w-`, dummy row removed.
pub fn effective_weights(layer: &Layer) -> Array2<f64> {
    let w = layer.xbar.weights().weights;
    let rows = layer.outputs();
    let theta = layer.config.theta;
    match layer.config.input_encoding {
        Encoding::Unipolar => w.slice(s![..rows, ..]).mapv(|v| v - theta),
        Encoding::Differential => {
            // theta cancels within each pair
            let pos = w.slice(s![..rows, 0..;2]);
            let neg = w.slice(s![..rows, 1..;2]);
            &pos - &neg
        }
    }
}

pub fn layer_forward(layer: &Layer, x: ArrayView1<'_, f64>) -> Result<LayerOutput> {
    if x.len() != layer.inputs() {
        return Err(Error::DimensionMismatch {
            expected: layer.inputs(),
            got: x.len(),
        });
    }
    let encoded = layer.config.input_encoding.encode(x);
    let mut pre = matvec(&layer.xbar, encoded.view())?;
    pre = pre.slice_move(s![..layer.outputs()]);
    let (act, gain) = (layer.config.activation, layer.config.gain);
    let out = pre.mapv(|v| act.apply(v, gain));
    Ok(LayerOutput { pre, out })
}

/// A stack of crossbar layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Everything a forward pass computed, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Logical input to each layer.
    pub inputs: Vec<Array1<f64>>,
    pub pre: Vec<Array1<f64>>,
    pub outputs: Vec<Array1<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array1<f64> {
        self.outputs.last().expect("trace of an empty network")
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Config(format!(
                    "layer {k} forwards {} outputs but layer {} takes {} inputs",
                    pair[0].outputs(),
                    k + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }
}

pub fn mlp_forward(mlp: &Mlp, x: ArrayView1<'_, f64>) -> Result<Trace> {
    let n = mlp.layers.len();
    let mut trace = Trace {
        inputs: Vec::with_capacity(n),
        pre: Vec::with_capacity(n),
        outputs: Vec::with_capacity(n),
    };
    let mut current = x.to_owned();
    for layer in &mlp.layers {
        let LayerOutput { pre, out } = layer_forward(layer, current.view())?;
        trace.inputs.push(current);
        trace.pre.push(pre);
        current = out.clone();
        trace.outputs.push(out);
    }
    Ok(trace)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict(mlp: &Mlp, x: ArrayView1<'_, f64>) -> Result<usize> {
    Ok(argmax(mlp_forward(mlp, x)?.output().view()))
}
