//! Datasets, synthetic generation and CSV artifacts.

pub mod manifest;
pub mod synth;
pub mod tables;

pub use manifest::RunManifest;
pub use synth::{default_profile, full_shape_cell_count, generate_synthetic, SyntheticSpec};
pub use tables::{
    fmt_real, load_csv, load_grid, load_raw, load_table, load_table_prefix, save_dataset_csv, save_grid, save_table,
    write_table, CdfPoint, CsvTable, HeteroLogRow,
};
