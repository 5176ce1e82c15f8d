//! Stuck-device defects and defect-rate sweeps.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::device::{CrossbarState, Mode};
use crate::error::{Error, Result};
use crate::network::Mlp;
use crate::stats;
use crate::training::{self, TrainConfig};

/// Devices whose conductance can no longer be changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectMask {
    pub stuck: Array2<bool>,
    /// Conductances at the time of injection.
    pub stuck_values: Array2<f64>,
}

impl DefectMask {
    pub fn none(xbar: &CrossbarState) -> Self {
        Self {
            stuck: Array2::from_elem(xbar.conductances().dim(), false),
            stuck_values: xbar.conductances().clone(),
        }
    }

    pub fn count(&self) -> usize {
        self.stuck.iter().filter(|&&s| s).count()
    }

    /// Whether every stuck device of `xbar` still holds exactly its
    /// injection-time conductance.
    pub fn is_respected(&self, xbar: &CrossbarState) -> bool {
        xbar.conductances().dim() == self.stuck.dim()
            && ndarray::Zip::from(&self.stuck)
                .and(&self.stuck_values)
                .and(xbar.conductances())
                .all(|&s, &v, &g| !s || v.to_bits() == g.to_bits())
    }
}

/// Mark each device of `xbar` defective independently with probability
/// `rate`, freezing it at its current conductance.
pub fn inject<R: Rng + ?Sized>(xbar: &CrossbarState, rate: f64, rng: &mut R) -> Result<DefectMask> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("defect rate must lie in [0, 1], got {rate}")));
    }
    let stuck = Array2::from_shape_simple_fn(xbar.conductances().dim(), || rng.gen_bool(rate));
    Ok(DefectMask {
        stuck,
        stuck_values: xbar.conductances().clone(),
    })
}

/// Inject defects into every layer of `mlp`.
pub fn inject_network<R: Rng + ?Sized>(mlp: &mut Mlp, rate: f64, rng: &mut R) -> Result<()> {
    for layer in mlp.layers_mut() {
        layer.defects = Some(inject(&layer.xbar, rate, rng)?);
    }
    Ok(())
}

pub fn network_respects_defects(mlp: &Mlp) -> bool {
    mlp.layers()
        .iter()
        .all(|l| l.defects.as_ref().is_none_or(|d| d.is_respected(&l.xbar)))
}

/// Independent RNG stream of one sweep cell.
pub fn cell_rng(seed: u64, mode: Mode, rate: f64, run: usize) -> ChaCha8Rng {
    let mode_bits: u64 = match mode {
        Mode::VoltageMode => 1,
        Mode::CurrentMode => 2,
    };
    let rate_ppm = (rate * 1e6).round() as u64 & 0x3fff_ffff;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mode_bits << 62 | rate_ppm << 32 | run as u64 & 0xffff_ffff);
    rng
}

/// What a sweep cell needs to know to build and train a fresh network.
pub trait SweepArchitecture: Sync {
    /// A randomly initialized network for `mode`.
    fn build(&self, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Mlp>;
    fn train_config(&self, mode: Mode) -> TrainConfig;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub mode: Mode,
    pub rate: f64,
    pub run: usize,
    pub defects: usize,
    pub devices: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: Mode,
    pub rate: f64,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

/// Train one fresh network per (mode, rate, run) with injected defects and
/// record final test accuracy.
pub fn run_cell<A: SweepArchitecture + ?Sized>(
    arch: &A,
    train: &[Sample],
    test: &[Sample],
    mode: Mode,
    rate: f64,
    run: usize,
    seed: u64,
) -> Result<SweepCell> {
    let mut rng = cell_rng(seed, mode, rate, run);
    let mut mlp = arch.build(mode, &mut rng)?;
    inject_network(&mut mlp, rate, &mut rng)?;
    let mut config = arch.train_config(mode);
    config.seed = rng.gen();
    training::train(&mut mlp, train, None, &config)?;
    if !network_respects_defects(&mlp) {
        return Err(Error::Config("training modified a stuck device".into()));
    }
    let (_, accuracy) = training::evaluate(&mlp, test)?;
    let layers = mlp.layers();
    Ok(SweepCell {
        mode,
        rate,
        run,
        defects: layers
            .iter()
            .filter_map(|l| l.defects.as_ref())
            .map(DefectMask::count)
            .sum(),
        devices: layers.iter().map(|l| l.xbar.conductances().len()).sum(),
        accuracy,
    })
}

pub fn defect_sweep<A: SweepArchitecture + ?Sized>(
    arch: &A,
    modes: &[Mode],
    train: &[Sample],
    test: &[Sample],
    rates: &[f64],
    runs_per_rate: usize,
    seed: u64,
) -> Result<SweepResult> {
    if runs_per_rate == 0 {
        return Err(Error::Domain("runs_per_rate must be at least 1".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::Domain(format!("defect rate must lie in [0, 1], got {r}")));
    }
    let jobs: Vec<(Mode, f64, usize)> = modes
        .iter()
        .flat_map(|&m| {
            rates
                .iter()
                .flat_map(move |&r| (0..runs_per_rate).map(move |k| (m, r, k)))
        })
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(m, r, k)| run_cell(arch, train, test, m, r, k, seed))
        .collect::<Result<Vec<_>>>()?;

    let rows = cells
        .chunks(runs_per_rate)
        .map(|chunk| {
            let acc: Vec<f64> = chunk.iter().map(|c| c.accuracy).collect();
            SweepRow {
                mode: chunk[0].mode,
                rate: chunk[0].rate,
                runs: chunk.len(),
                mean_accuracy: stats::mean(&acc),
                std_accuracy: stats::sample_std(&acc),
            }
        })
        .collect();
    Ok(SweepResult { cells, rows })
}
