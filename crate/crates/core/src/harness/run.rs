use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OutputConfig};
use super::data::{generate_splits, write_csv, Splits};
use crate::compression::{
    accuracy, block_distances, compress_epsilon, compress_trained, train, CompressionReport,
    TrainConfig, TrainLog,
};
use crate::net::{save_checkpoint, ResidualNet};
use crate::ot::SeedMode;
use crate::{Error, Result};

/// Offsets the training seed for weight initialization.
const INIT_STREAM: u64 = 0x1417_5eed;
/// Fixed stream for the reference-net distance column of sweep tables.
const REFERENCE_STREAM: u64 = 0x7ef0_7ef0;

/// Untrained network for `cfg` with inputs of width `input_dim`.
pub fn build_net(cfg: &ExperimentConfig, input_dim: usize) -> Result<ResidualNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ INIT_STREAM);
    let num_classes = cfg.dataset.n_classes;
    let mut net = ResidualNet::build(input_dim, &cfg.net.widths, num_classes, &mut rng)?;
    for b in &mut net.blocks {
        b.activation = cfg.net.activation;
    }
    Ok(net)
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains a fresh net on the training split.
pub fn train_net(cfg: &ExperimentConfig, splits: &Splits) -> Result<(ResidualNet, TrainLog)> {
    splits.train.check_labels(cfg.dataset.n_classes)?;
    let mut net = build_net(cfg, splits.train.dim())?;
    let log = train(&mut net, &splits.train, &cfg.train)?;
    Ok((net, log))
}

/// Plot rows: the dense net, then one row per removal step.
pub fn plot_rows(report: &CompressionReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec![
        "0".to_string(),
        report.dense_cpl.to_string(),
        report.dense_macs.to_string(),
        report.dense_accuracy.to_string(),
        report.dense_mean_distance.to_string(),
    ]];
    for i in 0..report.removal_order.len() {
        rows.push(vec![
            (i + 1).to_string(),
            report.cpl_trajectory[i].to_string(),
            report.macs_trajectory[i].to_string(),
            report.accuracy_trajectory[i].to_string(),
            report.mean_distance_trajectory[i].to_string(),
        ]);
    }
    rows
}

pub const PLOT_COLUMNS: [&str; 5] = ["step", "cpl", "macs", "accuracy", "mean_distance"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: CompressionReport,
    pub test_accuracy: f64,
    pub outputs: OutputConfig,
}

/// Trains, compresses and writes the report, checkpoint and plot data.
pub fn run_single(
    cfg: &ExperimentConfig,
    splits: &Splits,
    outputs: &OutputConfig,
) -> Result<RunOutcome> {
    let (mut net, _) = train_net(cfg, splits)?;
    let report = match cfg.compress.epsilon {
        Some(eps) => compress_epsilon(&mut net, &splits.val, eps, &cfg.train)?,
        None => compress_trained(&mut net, &splits.val, cfg.compress.delta, &cfg.train)?,
    };
    write_text(&outputs.report, &report.to_json()?)?;
    create_parent(&outputs.checkpoint)?;
    save_checkpoint(&net, &outputs.checkpoint)?;
    create_parent(&outputs.plot)?;
    write_csv(&outputs.plot, &PLOT_COLUMNS, &plot_rows(&report))?;
    Ok(RunOutcome {
        test_accuracy: accuracy(&net, &splits.test)?,
        report,
        outputs: outputs.clone(),
    })
}

/// One point of a sweep before seed aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// `(axis, value)` pairs in axis order.
    pub key: Vec<(String, String)>,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Cell {
    pub fn tag(&self) -> String {
        let mut parts: Vec<String> = self.key.iter().map(|(k, v)| format!("{k}={v}")).collect();
        parts.push(format!("seed={}", self.seed));
        parts.join("-")
    }
}

fn seed_mode_name(m: SeedMode) -> String {
    match m {
        SeedMode::Seeded(s) => format!("seeded{s}"),
        SeedMode::Unseeded => "unseeded".into(),
    }
}

type Setter = Box<dyn Fn(&mut TrainConfig) + Send + Sync>;

/// Cross product of the swept axes, each repeated over the seed list.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no [sweep] section".into()))?;
    sweep.validate(&cfg.train)?;
    let mut axes: Vec<(&str, Vec<(String, Setter)>)> = Vec::new();
    if let Some(v) = &sweep.lambda {
        axes.push((
            "lambda",
            v.iter()
                .map(|&x| {
                    (
                        x.to_string(),
                        Box::new(move |t: &mut TrainConfig| t.lambda = x) as Setter,
                    )
                })
                .collect(),
        ));
    }
    if let Some(v) = &sweep.n_proj {
        axes.push((
            "n_proj",
            v.iter()
                .map(|&x| {
                    (
                        x.to_string(),
                        Box::new(move |t: &mut TrainConfig| t.distance_cfg.n_proj = x) as Setter,
                    )
                })
                .collect(),
        ));
    }
    if let Some(v) = &sweep.batch_size {
        axes.push((
            "batch_size",
            v.iter()
                .map(|&x| {
                    (
                        x.to_string(),
                        Box::new(move |t: &mut TrainConfig| t.batch_size = x) as Setter,
                    )
                })
                .collect(),
        ));
    }
    if let Some(v) = &sweep.distance {
        axes.push((
            "distance",
            v.iter()
                .map(|&x| {
                    (
                        x.name().to_string(),
                        Box::new(move |t: &mut TrainConfig| t.distance = x) as Setter,
                    )
                })
                .collect(),
        ));
    }
    if let Some(v) = &sweep.seed_mode {
        axes.push((
            "seed_mode",
            v.iter()
                .map(|&x| {
                    (
                        seed_mode_name(x),
                        Box::new(move |t: &mut TrainConfig| t.distance_cfg.seed_mode = x) as Setter,
                    )
                })
                .collect(),
        ));
    }
    for (name, values) in &axes {
        let mut labels: Vec<&String> = values.iter().map(|(l, _)| l).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("sweep.{name} repeats a value")));
        }
    }
    let seeds = sweep.seeds.clone().unwrap_or_else(|| vec![cfg.train.seed]);
    let mut combos: Vec<Vec<usize>> = vec![vec![]];
    for (_, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|c| (0..values.len()).map(move |i| [c.clone(), vec![i]].concat()))
            .collect();
    }
    let mut cells = Vec::new();
    for combo in combos {
        for &seed in &seeds {
            let mut train = cfg.train.clone();
            let mut key = Vec::new();
            for ((name, values), &i) in axes.iter().zip(&combo) {
                (values[i].1)(&mut train);
                key.push((name.to_string(), values[i].0.clone()));
            }
            train.seed = seed;
            train.validate()?;
            cells.push(Cell { key, seed, train });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub report_path: PathBuf,
    pub final_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_distance: f64,
    pub reference_mean_distance: f64,
    pub removals: usize,
    pub cpl: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: Vec<(String, String)>,
    pub seeds: usize,
    pub final_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_distance: f64,
    pub reference_mean_distance: f64,
    pub removals: f64,
    pub cpl: f64,
    pub macs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axes: Vec<String>,
    pub rows: Vec<TableRow>,
    pub cells: Vec<CellResult>,
}

impl AblationTable {
    pub fn columns(&self) -> Vec<String> {
        let mut c = self.axes.clone();
        c.extend(
            [
                "seeds",
                "final_accuracy",
                "test_accuracy",
                "mean_distance",
                "reference_mean_distance",
                "removals",
                "cpl",
                "macs",
            ]
            .map(String::from),
        );
        c
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let mut out: Vec<String> = r.key.iter().map(|(_, v)| v.clone()).collect();
                out.push(r.seeds.to_string());
                for v in [
                    r.final_accuracy,
                    r.test_accuracy,
                    r.mean_distance,
                    r.reference_mean_distance,
                    r.removals,
                    r.cpl,
                    r.macs,
                ] {
                    out.push(v.to_string());
                }
                out
            })
            .collect()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs every sweep cell (in parallel), writes per-cell artifacts and the
/// aggregated table, and returns the table with seed medians.
pub fn ablate(cfg: &ExperimentConfig) -> Result<AblationTable> {
    cfg.validate()?;
    let cells = sweep_cells(cfg)?;
    let splits = generate_splits(&cfg.dataset)?;
    let (reference, _) = train_net(cfg, &splits)?;
    let results = cells
        .par_iter()
        .map(|cell| {
            let cell_cfg = ExperimentConfig {
                train: cell.train.clone(),
                sweep: None,
                ..cfg.clone()
            };
            let outputs = cfg.outputs.tagged(&cell.tag());
            let out = run_single(&cell_cfg, &splits, &outputs)?;
            let mut rng = ChaCha8Rng::seed_from_u64(REFERENCE_STREAM);
            let reference_mean_distance =
                block_distances(&reference, &splits.val.features, &cell.train, &mut rng)?.mean;
            Ok(CellResult {
                cell: cell.clone(),
                report_path: outputs.report,
                final_accuracy: out.report.final_accuracy,
                test_accuracy: out.test_accuracy,
                mean_distance: out.report.dense_mean_distance,
                reference_mean_distance,
                removals: out.report.kept_removals().len(),
                cpl: out.report.final_cpl,
                macs: out.report.final_macs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<TableRow> = Vec::new();
    for r in &results {
        if rows.last().is_some_and(|row| row.key == r.cell.key) {
            continue;
        }
        let group: Vec<&CellResult> = results
            .iter()
            .filter(|o| o.cell.key == r.cell.key)
            .collect();
        let med = |f: &dyn Fn(&CellResult) -> f64| {
            median(&group.iter().map(|c| f(c)).collect::<Vec<_>>())
        };
        rows.push(TableRow {
            key: r.cell.key.clone(),
            seeds: group.len(),
            final_accuracy: med(&|c| c.final_accuracy),
            test_accuracy: med(&|c| c.test_accuracy),
            mean_distance: med(&|c| c.mean_distance),
            reference_mean_distance: med(&|c| c.reference_mean_distance),
            removals: med(&|c| c.removals as f64),
            cpl: med(&|c| c.cpl as f64),
            macs: med(&|c| c.macs as f64),
        });
    }
    let table = AblationTable {
        axes: results
            .first()
            .map(|r| r.cell.key.iter().map(|(k, _)| k.clone()).collect())
            .unwrap_or_default(),
        rows,
        cells: results,
    };
    create_parent(&cfg.outputs.table)?;
    write_csv(&cfg.outputs.table, &table.columns(), &table.csv_rows())?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentOutcome {
    Single(RunOutcome),
    Sweep(AblationTable),
}

/// Single run, or every cell of the sweep when one is configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if cfg.sweep.is_some() {
        return ablate(cfg).map(ExperimentOutcome::Sweep);
    }
    let splits = generate_splits(&cfg.dataset)?;
    run_single(cfg, &splits, &cfg.outputs).map(ExperimentOutcome::Single)
}
