//! Mapping target weight matrices onto current-mode crossbars.
//!
//! A current-mode crossbar can only realize matrices whose columns sum to one
//! and whose entries lie in the achievable weight range. Each column of a
//! target matrix is therefore projected onto the hyperplane `sum(w) = 1`,
//! then pulled into the box `[w_min, w_max]` by repeatedly clamping the worst
//! offending coordinate and spreading the resulting slack evenly over the
//! coordinates that are still free.
//!
//! A dummy row sidesteps the column constraint altogether: functional weights
//! are copied from the target and the dummy weight takes up the slack. That
//! only works when the targets are bounded so the dummy weight itself stays
//! realizable, see [`bound_targets`].

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::device::{weight_range, DeviceModel, Mode, WeightMatrix};
use crate::error::{Error, Result};

/// Coordinates within this distance of a box face count as on the face.
const BOX_TOL: f64 = 1e-12;
const SUM_TOL: f64 = 1e-9;

/// Application-level weight matrix to be realized on hardware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetWeights {
    pub wbar: Array2<f64>,
    pub wbar_min: f64,
    pub wbar_max: f64,
}

impl TargetWeights {
    pub fn new(wbar: Array2<f64>, wbar_min: f64, wbar_max: f64) -> Result<Self> {
        if wbar_min > wbar_max {
            return Err(Error::Domain(format!("target range [{wbar_min}, {wbar_max}] is empty")));
        }
        if let Some(v) = wbar.iter().find(|&&v| !(v >= wbar_min && v <= wbar_max)) {
            return Err(Error::Domain(format!(
                "target weight {v} outside declared range [{wbar_min}, {wbar_max}]"
            )));
        }
        Ok(Self {
            wbar,
            wbar_min,
            wbar_max,
        })
    }

    /// Uses the observed extremes of `wbar` as the declared range.
    pub fn from_matrix(wbar: Array2<f64>) -> Result<Self> {
        if wbar.is_empty() {
            return Err(Error::Domain("empty target matrix".into()));
        }
        let lo = wbar.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = wbar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(wbar, lo, hi)
    }

    pub fn rows(&self) -> usize {
        self.wbar.nrows()
    }

    pub fn cols(&self) -> usize {
        self.wbar.ncols()
    }
}

/// Per-weight box constraint `[w_min, w_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub w_min: f64,
    pub w_max: f64,
}

impl BoxBounds {
    pub fn new(w_min: f64, w_max: f64) -> Result<Self> {
        if !(0.0 <= w_min && w_min <= w_max && w_max <= 1.0) {
            return Err(Error::Domain(format!(
                "box bounds must satisfy 0 <= w_min <= w_max <= 1, got [{w_min}, {w_max}]"
            )));
        }
        Ok(Self { w_min, w_max })
    }

    /// `[0, 1]`.
    pub fn unit() -> Self {
        Self { w_min: 0.0, w_max: 1.0 }
    }

    /// The achievable current-mode weight range of an `m`-row crossbar.
    pub fn for_device(device: &DeviceModel, m: usize) -> Result<Self> {
        let (lo, hi) = weight_range(Mode::CurrentMode, m, device.ratio())?;
        Self::new(lo, hi)
    }

    /// Whether some column of `m` entries can sum to one inside the box.
    pub fn is_feasible(&self, m: usize) -> bool {
        let m = m as f64;
        m * self.w_min <= 1.0 + SUM_TOL && 1.0 <= m * self.w_max + SUM_TOL
    }

    fn check_feasible(&self, m: usize) -> Result<()> {
        if self.is_feasible(m) {
            Ok(())
        } else {
            Err(Error::Infeasible(format!(
                "no {m}-entry column in [{}, {}] sums to 1",
                self.w_min, self.w_max
            )))
        }
    }

    fn violation(&self, w: f64) -> f64 {
        (self.w_min - w).max(w - self.w_max)
    }
}

/// Euclidean projection onto `sum(w) = 1`: `w_i = c_i + (1 - sum(c)) / M`.
pub fn project_hyperplane(col: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if col.is_empty() {
        return Err(Error::Domain("cannot project an empty column".into()));
    }
    let shift = (1.0 - col.sum()) / col.len() as f64;
    Ok(col.mapv(|c| c + shift))
}

/// Result of [`clamp_to_box`].
#[derive(Debug, Clone, PartialEq)]
pub struct Clamped {
    pub weights: Array1<f64>,
    /// Number of coordinates that were frozen at a bound.
    pub iterations: usize,
}

/// Move a point of the hyperplane `sum(w) = 1` onto its intersection with
/// the box.
///
/// Each pass freezes the unfrozen coordinate that lies furthest outside the
/// box (ties go to the lowest index) at the bound it violates, then adds
/// `(1 - sum(w)) / (number unfrozen)` to every unfrozen coordinate. Frozen
/// coordinates are never released, so at most `M` passes are made.
pub fn clamp_to_box(col: ArrayView1<'_, f64>, bounds: BoxBounds) -> Result<Clamped> {
    let m = col.len();
    if m == 0 {
        return Err(Error::Domain("cannot clamp an empty column".into()));
    }
    bounds.check_feasible(m)?;
    if (col.sum() - 1.0).abs() > SUM_TOL {
        return Err(Error::Domain(format!(
            "column must sum to 1 before clamping, sums to {}",
            col.sum()
        )));
    }

    let mut w = col.to_owned();
    let mut frozen = vec![false; m];
    let mut iterations = 0;
    loop {
        let mut worst: Option<(usize, f64)> = None;
        for (i, &v) in w.iter().enumerate() {
            if frozen[i] {
                continue;
            }
            let d = bounds.violation(v);
            if d > BOX_TOL && worst.is_none_or(|(_, best)| d > best) {
                worst = Some((i, d));
            }
        }
        let Some((i, _)) = worst else { break };

        w[i] = if w[i] < bounds.w_min {
            bounds.w_min
        } else {
            bounds.w_max
        };
        frozen[i] = true;
        iterations += 1;

        let free = frozen.iter().filter(|&&f| !f).count();
        if free == 0 {
            break;
        }
        let shift = (1.0 - w.sum()) / free as f64;
        for (v, _) in w.iter_mut().zip(&frozen).filter(|(_, &f)| !f) {
            *v += shift;
        }
    }

    // Snap round-off residue onto the faces.
    w.mapv_inplace(|v| v.clamp(bounds.w_min, bounds.w_max));
    if (w.sum() - 1.0).abs() > SUM_TOL {
        // A tie broken towards the wrong face can freeze every coordinate
        // off the hyperplane, e.g. [1, 0.8, -0.8] in [0, 1].
        w = box_projection(col, bounds);
        iterations = w.iter().filter(|&&v| v == bounds.w_min || v == bounds.w_max).count();
    }
    Ok(Clamped { weights: w, iterations })
}

/// Exact Euclidean projection onto the box intersected with `sum(w) = 1`:
/// `w = clip(col + lambda)` with `lambda` found by bisection and then solved
/// exactly on the resulting free set.
fn box_projection(col: ArrayView1<'_, f64>, bounds: BoxBounds) -> Array1<f64> {
    let (lo, hi) = (bounds.w_min, bounds.w_max);
    let at = |lambda: f64| col.mapv(|c| (c + lambda).clamp(lo, hi));
    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = col.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut a, mut b) = (lo - max, hi - min);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if at(mid).sum() < 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let lambda = 0.5 * (a + b);
    let free: Vec<usize> = (0..col.len())
        .filter(|&i| lo < col[i] + lambda && col[i] + lambda < hi)
        .collect();
    if free.is_empty() {
        return at(lambda);
    }
    let fixed: f64 = (0..col.len())
        .filter(|i| !free.contains(i))
        .map(|i| (col[i] + lambda).clamp(lo, hi))
        .sum();
    let exact = (1.0 - fixed - free.iter().map(|&i| col[i]).sum::<f64>()) / free.len() as f64;
    let mut w = at(lambda);
    for &i in &free {
        w[i] = (col[i] + exact).clamp(lo, hi);
    }
    w
}

/// Closest current-mode weight matrix to `targets`, column by column:
/// hyperplane projection followed by box clamping.
pub fn map_matrix(targets: &TargetWeights, bounds: BoxBounds) -> Result<WeightMatrix> {
    map_columns(&targets.wbar, bounds)
}

fn map_columns(wbar: &Array2<f64>, bounds: BoxBounds) -> Result<WeightMatrix> {
    bounds.check_feasible(wbar.nrows())?;
    let mut out = Array2::zeros(wbar.dim());
    for (j, col) in wbar.axis_iter(Axis(1)).enumerate() {
        let projected = project_hyperplane(col)?;
        let clamped = clamp_to_box(projected.view(), bounds)?;
        out.column_mut(j).assign(&clamped.weights);
    }
    Ok(WeightMatrix {
        weights: out,
        mode: Mode::CurrentMode,
    })
}

/// Append a dummy row holding `1 - sum_k wbar[k][j]` to the targets. The
/// result is not checked against any box.
pub fn dummy_targets(targets: &TargetWeights) -> Array2<f64> {
    let (m, n) = targets.wbar.dim();
    let mut out = Array2::zeros((m + 1, n));
    out.slice_mut(ndarray::s![..m, ..]).assign(&targets.wbar);
    let slack = targets.wbar.sum_axis(Axis(0)).mapv(|s| 1.0 - s);
    out.row_mut(m).assign(&slack);
    out
}

/// Realize `targets` exactly on a crossbar with one extra dummy row.
///
/// Fails with [`Error::DummyOutOfBounds`] listing every column in which a
/// copied or dummy weight leaves the box; run [`bound_targets`] first to
/// rule that out.
pub fn map_with_dummy(targets: &TargetWeights, bounds: BoxBounds) -> Result<WeightMatrix> {
    let weights = dummy_targets(targets);
    let columns: Vec<usize> = weights
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().any(|&w| bounds.violation(w) > BOX_TOL))
        .map(|(j, _)| j)
        .collect();
    if !columns.is_empty() {
        return Err(Error::DummyOutOfBounds {
            columns,
            w_min: bounds.w_min,
            w_max: bounds.w_max,
        });
    }
    Ok(WeightMatrix {
        weights,
        mode: Mode::CurrentMode,
    })
}

/// Dummy-row targets forced back into the box by the ordinary projection and
/// clamping. This is what a crossbar actually ends up with when unbounded
/// targets are mapped through a dummy row.
pub fn map_with_dummy_clamped(targets: &TargetWeights, bounds: BoxBounds) -> Result<WeightMatrix> {
    map_columns(&dummy_targets(targets), bounds)
}

/// Interval that targets must lie in so that a crossbar with `m` rows, one of
/// them a dummy, can copy them exactly:
/// `[max((1 - w_max)/(m - 1), w_min), min((1 - w_min)/(m - 1), w_max)]`.
pub fn target_interval(bounds: BoxBounds, m: usize) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::Domain("dummy-row bounding needs m >= 2".into()));
    }
    let functional = (m - 1) as f64;
    let lo = ((1.0 - bounds.w_max) / functional).max(bounds.w_min);
    let hi = ((1.0 - bounds.w_min) / functional).min(bounds.w_max);
    if lo > hi {
        return Err(Error::Infeasible(format!(
            "target interval [{lo}, {hi}] is empty for m = {m}"
        )));
    }
    Ok((lo, hi))
}

/// Clip every target into [`target_interval`].
pub fn bound_targets(targets: &TargetWeights, bounds: BoxBounds, m: usize) -> Result<TargetWeights> {
    let (lo, hi) = target_interval(bounds, m)?;
    let wbar = targets.wbar.mapv(|w| w.clamp(lo, hi));
    let wbar_min = targets.wbar_min.clamp(lo, hi);
    let wbar_max = targets.wbar_max.clamp(lo, hi);
    TargetWeights::new(wbar, wbar_min, wbar_max)
}

/// Offset that centers the effective weight range on zero.
pub fn compute_theta(wbar_min: f64, wbar_max: f64) -> f64 {
    0.5 * (wbar_max + wbar_min)
}

/// Conductances realizing a current-mode weight matrix, with each column
/// scaled so that its largest conductance equals `g_max`.
pub fn recover_conductances(weights: &WeightMatrix, device: &DeviceModel) -> Result<Array2<f64>> {
    if weights.mode != Mode::CurrentMode {
        return Err(Error::Config(
            "conductance recovery expects current-mode weights".into(),
        ));
    }
    let g = device.ratio();
    let mut out = Array2::zeros(weights.weights.dim());
    for (j, col) in weights.weights.axis_iter(Axis(1)).enumerate() {
        if (col.sum() - 1.0).abs() > SUM_TOL {
            return Err(Error::Domain(format!("column {j} sums to {}, not 1", col.sum())));
        }
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = lo / hi;
        if hi.is_nan() || hi <= 0.0 || ratio < g * (1.0 - 1e-12) {
            return Err(Error::DynamicRange { column: j, ratio, g });
        }
        let scale = device.g_max / hi;
        for (o, &w) in out.column_mut(j).iter_mut().zip(col) {
            *o = device.clip(w * scale);
        }
    }
    Ok(out)
}

/// Voltage-mode conductances for weights in `[g, 1]`: `G = w * g_max`.
pub fn voltage_conductances(weights: &Array2<f64>, device: &DeviceModel) -> Array2<f64> {
    weights.mapv(|w| device.clip(w * device.g_max))
}
