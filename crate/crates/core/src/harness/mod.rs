//! Datasets, experiment configuration, sweeps, report files and the CLI.

pub mod cli;
mod config;
mod data;
mod run;

pub use config::{
    CompressConfig, ExperimentConfig, NetConfig, OutputConfig, Overrides, SweepConfig,
    CONFIG_FORMAT_VERSION,
};
pub use data::{
    generate_dataset, generate_splits, read_cloud_csv, read_labeled_csv, split_dataset, write_csv,
    write_labeled_csv, DatasetKind, DatasetSpec, Splits, LABEL_COLUMN,
};
pub use run::{
    ablate, build_net, median, plot_rows, run_experiment, run_single, sweep_cells, train_net,
    AblationTable, Cell, CellResult, ExperimentOutcome, RunOutcome, TableRow, PLOT_COLUMNS,
};
