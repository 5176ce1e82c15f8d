//! Experiment runner behind the `xbar` binary.
//!
//! Every run writes one or more CSV files plus `<experiment>.config.json`
//! holding the fully resolved configuration into the output directory.
//! Floats are written in Rust's shortest round-trip form, so identical
//! configurations produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use xbar_core::dataset::load_mnist;
use xbar_core::defects::defect_sweep;
use xbar_core::experiment::{
    hidden_histogram, logic_map, logic_train, mnist_run, LogicMapConfig, LogicTrainConfig, MnistArchitecture,
    LOGIC_COLUMNS,
};
use xbar_core::{DeviceModel, Mode, Rule, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    LogicMap,
    LogicTrain,
    Mnist,
    Defects,
    Hist,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::LogicMap => "logic-map",
            Self::LogicTrain => "logic-train",
            Self::Mnist => "mnist",
            Self::Defects => "defects",
            Self::Hist => "hist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSelection {
    Voltage,
    Current,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            Self::Voltage => vec![Mode::VoltageMode],
            Self::Current => vec![Mode::CurrentMode],
            Self::Both => vec![Mode::VoltageMode, Mode::CurrentMode],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
}

/// Neuron gains. Current-mode gain is in units of the inverse half-width of
/// the layer's dummy-safe weight interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gains {
    pub voltage: f64,
    pub current: f64,
    pub logic: f64,
}

impl Default for Gains {
    fn default() -> Self {
        let arch = MnistArchitecture::default();
        Self {
            voltage: arch.voltage_gain,
            current: arch.current_gain,
            logic: LogicTrainConfig::default().gain,
        }
    }
}

/// Everything a run depends on. Fields missing from a JSON file take their
/// defaults; command-line flags override both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub mode: ModeSelection,
    /// Rule for current-mode networks; voltage mode always uses `standard`.
    pub rule: Rule,
    pub device: DeviceModel,
    pub dims: Dims,
    /// Learning rate for every selected mode. Unset means the per-mode
    /// default of the experiment.
    pub alpha: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: u64,
    pub defect_rates: Vec<f64>,
    pub runs: usize,
    pub data_dir: Option<PathBuf>,
    pub train_limit: usize,
    pub test_limit: usize,
    pub gains: Gains,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let arch = MnistArchitecture::default();
        Self {
            experiment: Experiment::LogicMap,
            mode: ModeSelection::Both,
            rule: Rule::CurrentSimplified,
            device: DeviceModel::default(),
            dims: Dims {
                inputs: arch.inputs,
                hidden: arch.hidden,
                outputs: arch.outputs,
            },
            alpha: None,
            epochs: None,
            seed: 1,
            defect_rates: vec![0.0, 0.25, 0.5, 0.75],
            runs: 3,
            data_dir: None,
            train_limit: 10_000,
            test_limit: 10_000,
            gains: Gains::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn rule_for(&self, mode: Mode) -> Result<Rule> {
        match mode {
            Mode::VoltageMode => Ok(Rule::Standard),
            Mode::CurrentMode if self.rule == Rule::Standard => {
                bail!("rule standard cannot train current-mode networks; use current-exact or current-simplified")
            }
            Mode::CurrentMode => Ok(self.rule),
        }
    }

    pub fn architecture(&self) -> Result<MnistArchitecture> {
        let Dims {
            inputs,
            hidden,
            outputs,
        } = self.dims;
        if inputs == 0 || hidden == 0 || outputs == 0 {
            bail!("dims must be positive, got {inputs}/{hidden}/{outputs}");
        }
        let mut arch = MnistArchitecture {
            inputs,
            hidden,
            outputs,
            device: self.device,
            voltage_gain: self.gains.voltage,
            current_gain: self.gains.current,
            ..MnistArchitecture::default()
        };
        if let Some(e) = self.epochs {
            arch.epochs = e;
        }
        if let Some(a) = self.alpha {
            arch.voltage_alpha = a;
            arch.current_alpha = a;
        }
        if self.mode != ModeSelection::Voltage {
            arch.current_rule = self.rule_for(Mode::CurrentMode)?;
        }
        Ok(arch)
    }

    pub fn logic(&self) -> LogicTrainConfig {
        let d = LogicTrainConfig::default();
        LogicTrainConfig {
            alpha: self.alpha.unwrap_or(d.alpha),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed,
            gain: self.gains.logic,
            device: self.device,
        }
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data_dir
            .as_deref()
            .context("this experiment needs MNIST: pass --data-dir or set XBAR_DATA_DIR")
    }
}

/// A CSV table held as already-formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Write `table` as comma-separated, LF-terminated CSV.
pub fn emit_csv(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Resolved configuration plus the derived per-experiment parameters.
#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    architecture: Option<MnistArchitecture>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logic_train: Option<LogicTrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    logic_map: Option<LogicMapConfig>,
}

fn load_data(config: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let dir = config.data_dir()?;
    load_mnist(dir, Some(config.train_limit), Some(config.test_limit))
        .with_context(|| format!("loading MNIST from {}", dir.display()))
}

fn logic_map_tables() -> Result<(Vec<(&'static str, Table)>, LogicMapConfig)> {
    let cfg = LogicMapConfig::default();
    let report = logic_map(&cfg)?;
    let mut header = vec!["variant", "row"];
    header.extend(LOGIC_COLUMNS);
    let mut weights = Table::new(&header);
    let mut errors = Table::new(&["variant", "errors", "patterns", "error_rate"]);
    for v in &report.variants {
        for (i, row) in v.weights.rows().into_iter().enumerate() {
            let mut cells = vec![v.variant.name().to_string(), ["and", "or", "dummy"][i].to_string()];
            cells.extend(row.iter().map(|&w| num(w)));
            weights.push(cells);
        }
        errors.push(vec![
            v.variant.name().into(),
            v.errors.to_string(),
            "4".into(),
            num(v.error_rate),
        ]);
    }
    Ok((vec![("logic-map", weights), ("logic-map-errors", errors)], cfg))
}

fn logic_train_table(config: &RunConfig) -> Result<Table> {
    let lt = config.logic();
    let mut t = Table::new(&["mode", "rule", "epoch", "mse"]);
    for mode in config.mode.modes() {
        let rule = config.rule_for(mode)?;
        let report = logic_train(mode, rule, &lt)?;
        for (e, mse) in report.mse.iter().enumerate() {
            t.push(vec![
                mode.name().into(),
                rule.name().into(),
                (e + 1).to_string(),
                num(*mse),
            ]);
        }
    }
    Ok(t)
}

fn mnist_table(config: &RunConfig, arch: &MnistArchitecture) -> Result<Table> {
    let (train, test) = load_data(config)?;
    let mut t = Table::new(&["mode", "rule", "epoch", "train_mse", "test_accuracy"]);
    for mode in config.mode.modes() {
        let run = mnist_run(arch, mode, &train, &test, config.seed)?;
        let rule = arch.train_config_for(mode).rule;
        for (e, (mse, acc)) in run.report.mse.iter().zip(&run.report.accuracy).enumerate() {
            t.push(vec![
                mode.name().into(),
                rule.name().into(),
                (e + 1).to_string(),
                num(*mse),
                num(*acc),
            ]);
        }
    }
    Ok(t)
}

fn defect_tables(config: &RunConfig, arch: &MnistArchitecture) -> Result<Vec<(&'static str, Table)>> {
    let (train, test) = load_data(config)?;
    let sweep = defect_sweep(
        arch,
        &config.mode.modes(),
        &train,
        &test,
        &config.defect_rates,
        config.runs,
        config.seed,
    )?;
    let mut summary = Table::new(&["mode", "rate", "runs", "mean_accuracy", "std_accuracy"]);
    for r in &sweep.rows {
        summary.push(vec![
            r.mode.name().into(),
            num(r.rate),
            r.runs.to_string(),
            num(r.mean_accuracy),
            num(r.std_accuracy),
        ]);
    }
    let mut runs = Table::new(&["mode", "rate", "run", "defects", "devices", "accuracy"]);
    for c in &sweep.cells {
        runs.push(vec![
            c.mode.name().into(),
            num(c.rate),
            c.run.to_string(),
            c.defects.to_string(),
            c.devices.to_string(),
            num(c.accuracy),
        ]);
    }
    Ok(vec![("defects", summary), ("defects-runs", runs)])
}

fn hist_tables(config: &RunConfig, arch: &MnistArchitecture) -> Result<Vec<(&'static str, Table)>> {
    let (train, test) = load_data(config)?;
    let mut counts = Table::new(&["mode", "bin", "lo", "hi", "count"]);
    let mut stats = Table::new(&["mode", "weights", "skewness", "excess_kurtosis", "test_accuracy"]);
    for mode in config.mode.modes() {
        let run = mnist_run(arch, mode, &train, &test, config.seed)?;
        let h = hidden_histogram(arch, &run)?;
        for (k, &c) in h.counts.iter().enumerate() {
            counts.push(vec![
                mode.name().into(),
                k.to_string(),
                num(h.edges[k]),
                num(h.edges[k + 1]),
                c.to_string(),
            ]);
        }
        stats.push(vec![
            mode.name().into(),
            h.counts.iter().sum::<usize>().to_string(),
            num(h.skewness),
            num(h.excess_kurtosis),
            num(*run.report.accuracy.last().unwrap_or(&f64::NAN)),
        ]);
    }
    Ok(vec![("hist", counts), ("hist-stats", stats)])
}

/// Run one experiment and return the paths written.
pub fn run(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut sidecar = Sidecar {
        config,
        architecture: None,
        logic_train: None,
        logic_map: None,
    };
    let tables = match config.experiment {
        Experiment::LogicMap => {
            let (tables, cfg) = logic_map_tables()?;
            sidecar.logic_map = Some(cfg);
            tables
        }
        Experiment::LogicTrain => {
            sidecar.logic_train = Some(config.logic());
            vec![("logic-train", logic_train_table(config)?)]
        }
        Experiment::Mnist | Experiment::Defects | Experiment::Hist => {
            let arch = config.architecture()?;
            sidecar.architecture = Some(arch);
            match config.experiment {
                Experiment::Mnist => vec![("mnist", mnist_table(config, &arch)?)],
                Experiment::Defects => defect_tables(config, &arch)?,
                _ => hist_tables(config, &arch)?,
            }
        }
    };

    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    let mut written = Vec::new();
    for (name, table) in &tables {
        let path = config.out.join(format!("{name}.csv"));
        emit_csv(table, &path)?;
        written.push(path);
    }
    let path = config.out.join(format!("{}.config.json", config.experiment.name()));
    let json = serde_json::to_string_pretty(&sidecar)? + "\n";
    fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(written)
}
