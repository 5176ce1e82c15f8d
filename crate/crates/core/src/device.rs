//! Device parameters, crossbar conductance state and weight extraction.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Memristor technology parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceModel {
    /// Minimum programmable conductance in siemens.
    pub g_min: f64,
    /// Maximum programmable conductance in siemens.
    pub g_max: f64,
    /// Switching threshold voltage in volts. Reads must stay below it.
    pub v_th: f64,
}

impl DeviceModel {
    pub fn new(g_min: f64, g_max: f64, v_th: f64) -> Result<Self> {
        if !(g_min > 0.0 && g_min < g_max && g_max.is_finite()) {
            return Err(Error::Domain(format!(
                "conductance bounds must satisfy 0 < g_min < g_max, got [{g_min}, {g_max}]"
            )));
        }
        if !(v_th > 0.0 && v_th.is_finite()) {
            return Err(Error::Domain(format!("v_th must be positive, got {v_th}")));
        }
        Ok(Self { g_min, g_max, v_th })
    }

    /// Conductance ratio `g = g_min / g_max`.
    pub fn ratio(&self) -> f64 {
        self.g_min / self.g_max
    }

    pub fn clip(&self, conductance: f64) -> f64 {
        conductance.clamp(self.g_min, self.g_max)
    }
}

impl Default for DeviceModel {
    /// TiO2-style devices with `G_min = 21 µS`, `G_max = 1 mS` and a 0.5 V
    /// read threshold.
    fn default() -> Self {
        Self {
            g_min: 2.1e-5,
            g_max: 1e-3,
            v_th: 0.5,
        }
    }
}

/// How the crossbar is driven, which determines how conductances turn into
/// weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Voltage-driven columns: `w = G / G_max`.
    VoltageMode,
    /// Current-driven columns: `w = G / sum(column of G)`.
    CurrentMode,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::VoltageMode => "voltage",
            Mode::CurrentMode => "current",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An `M x N` conductance matrix with its operating configuration.
///
/// Rows are post-synaptic outputs, columns are inputs. When `has_dummy_row`
/// is set, the last row is a dummy row whose output is discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarState {
    conductances: Array2<f64>,
    mode: Mode,
    has_dummy_row: bool,
    theta: f64,
    device: DeviceModel,
}

impl CrossbarState {
    pub fn new(
        conductances: Array2<f64>,
        mode: Mode,
        has_dummy_row: bool,
        theta: f64,
        device: DeviceModel,
    ) -> Result<Self> {
        let (m, n) = conductances.dim();
        if m == 0 || n == 0 {
            return Err(Error::Domain(format!("crossbar must be non-empty, got {m}x{n}")));
        }
        if has_dummy_row && m < 2 {
            return Err(Error::Domain("a dummy row needs at least two rows".into()));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::Domain(format!("theta must be non-negative, got {theta}")));
        }
        if let Some(bad) = conductances
            .iter()
            .find(|&&c| !(c >= device.g_min && c <= device.g_max))
        {
            return Err(Error::Domain(format!(
                "conductance {bad} outside [{}, {}]",
                device.g_min, device.g_max
            )));
        }
        Ok(Self {
            conductances,
            mode,
            has_dummy_row,
            theta,
            device,
        })
    }

    /// Conductances drawn independently and uniformly from `[g_min, g_max]`.
    pub fn random<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        mode: Mode,
        has_dummy_row: bool,
        theta: f64,
        device: DeviceModel,
        rng: &mut R,
    ) -> Result<Self> {
        let g = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(device.g_min..=device.g_max));
        Self::new(g, mode, has_dummy_row, theta, device)
    }

    pub fn conductances(&self) -> &Array2<f64> {
        &self.conductances
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn has_dummy_row(&self) -> bool {
        self.has_dummy_row
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn device(&self) -> &DeviceModel {
        &self.device
    }

    pub fn rows(&self) -> usize {
        self.conductances.nrows()
    }

    pub fn cols(&self) -> usize {
        self.conductances.ncols()
    }

    /// Number of functional (non-dummy) rows, `M'`.
    pub fn functional_rows(&self) -> usize {
        self.rows() - usize::from(self.has_dummy_row)
    }

    /// Index of the dummy row, if any.
    pub fn dummy_row(&self) -> Option<usize> {
        self.has_dummy_row.then(|| self.rows() - 1)
    }

    /// Overwrite a single conductance. The value is clipped into the device
    /// range.
    pub fn set(&mut self, row: usize, col: usize, conductance: f64) {
        self.conductances[[row, col]] = self.device.clip(conductance);
    }

    /// Add `deltas` elementwise, skipping entries where `frozen` is true, and
    /// clip the result into `[g_min, g_max]`.
    pub fn apply_deltas(&mut self, deltas: &Array2<f64>, frozen: Option<&Array2<bool>>) -> Result<()> {
        if deltas.dim() != self.conductances.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.conductances.len(),
                got: deltas.len(),
            });
        }
        let device = self.device;
        match frozen {
            Some(mask) => {
                if mask.dim() != self.conductances.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.conductances.len(),
                        got: mask.len(),
                    });
                }
                ndarray::Zip::from(&mut self.conductances)
                    .and(deltas)
                    .and(mask)
                    .for_each(|g, &d, &stuck| {
                        if !stuck {
                            *g = device.clip(*g + d);
                        }
                    });
            }
            None => ndarray::Zip::from(&mut self.conductances)
                .and(deltas)
                .for_each(|g, &d| *g = device.clip(*g + d)),
        }
        Ok(())
    }

    /// Mode-appropriate weight matrix.
    pub fn weights(&self) -> WeightMatrix {
        match self.mode {
            Mode::VoltageMode => voltage_weights_unchecked(self),
            Mode::CurrentMode => current_weights_unchecked(self),
        }
    }

    /// Column sums of the conductance matrix.
    pub fn column_sums(&self) -> Array1<f64> {
        self.conductances.sum_axis(Axis(0))
    }
}

/// Dimensionless weights derived from a crossbar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    pub weights: Array2<f64>,
    pub mode: Mode,
}

impl WeightMatrix {
    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }
}

/// `w[i][j] = G[i][j] / g_max`.
pub fn weights_voltage(xbar: &CrossbarState) -> Result<WeightMatrix> {
    if xbar.mode != Mode::VoltageMode {
        return Err(Error::Config("weights_voltage on a current-mode crossbar".into()));
    }
    Ok(voltage_weights_unchecked(xbar))
}

/// `w[i][j] = G[i][j] / sum_k G[k][j]`. Every column sums to one.
pub fn weights_current(xbar: &CrossbarState) -> Result<WeightMatrix> {
    if xbar.mode != Mode::CurrentMode {
        return Err(Error::Config("weights_current on a voltage-mode crossbar".into()));
    }
    Ok(current_weights_unchecked(xbar))
}

fn voltage_weights_unchecked(xbar: &CrossbarState) -> WeightMatrix {
    WeightMatrix {
        weights: &xbar.conductances / xbar.device.g_max,
        mode: Mode::VoltageMode,
    }
}

fn current_weights_unchecked(xbar: &CrossbarState) -> WeightMatrix {
    let sums = xbar.column_sums();
    WeightMatrix {
        weights: &xbar.conductances / &sums.insert_axis(Axis(0)),
        mode: Mode::CurrentMode,
    }
}

/// Achievable `(w_min, w_max)` for a single weight in a crossbar with `m`
/// rows and conductance ratio `g`.
///
/// For current mode the extremes are reached with one device at one bound and
/// the remaining `m - 1` devices at the other:
/// `g / (m - 1 + g)` and `1 / ((m - 1) g + 1)`. The pair is always returned
/// sorted; the familiar printed form of this inequality swaps the two sides.
pub fn weight_range(mode: Mode, m: usize, g: f64) -> Result<(f64, f64)> {
    if m == 0 {
        return Err(Error::Domain("weight range needs at least one row".into()));
    }
    if !(g > 0.0 && g <= 1.0) {
        return Err(Error::Domain(format!("conductance ratio must lie in (0, 1], got {g}")));
    }
    Ok(match mode {
        Mode::VoltageMode => (g, 1.0),
        Mode::CurrentMode => {
            let others = (m - 1) as f64;
            (g / (others + g), 1.0 / (others * g + 1.0))
        }
    })
}

/// Largest input current that column `col` can carry without disturbing the
/// stored states: `V_th * sum_i G[i][col]`. Reads strictly below it are safe.
pub fn max_read_current(xbar: &CrossbarState, col: usize) -> Result<f64> {
    if xbar.mode != Mode::CurrentMode {
        return Err(Error::Config("read-current limit applies to current mode only".into()));
    }
    if col >= xbar.cols() {
        return Err(Error::IndexOutOfRange {
            index: col,
            len: xbar.cols(),
        });
    }
    Ok(xbar.device.v_th * xbar.conductances.column(col).sum())
}

/// Whether driving column `col` with `current` amperes leaves the devices
/// undisturbed.
pub fn read_is_safe(xbar: &CrossbarState, col: usize, current: f64) -> Result<bool> {
    Ok(current.abs() < max_read_current(xbar, col)?)
}

/// `s = W x - theta * sum(x)` over all rows, dummy row included.
///
/// Inputs are normalized to the full-scale voltage or current and are
/// expected to lie in `[-1, 1]`; this is not enforced so that linear
/// combinations of inputs can be evaluated.
pub fn matvec(xbar: &CrossbarState, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != xbar.cols() {
        return Err(Error::DimensionMismatch {
            expected: xbar.cols(),
            got: x.len(),
        });
    }
    let w = xbar.weights();
    let mut s = w.weights.dot(&x);
    if xbar.theta != 0.0 {
        let offset = xbar.theta * x.sum();
        s.mapv_inplace(|v| v - offset);
    }
    Ok(s)
}
