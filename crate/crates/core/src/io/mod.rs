//! Volume files and CSV reports.

mod atomic;
pub mod nifti;
pub mod report;

pub use atomic::write_atomic;
pub use nifti::{encode_volume, parse_volume, read_volume, write_volume, Datatype, NiftiHeader, Volume, VolumeData};
pub use report::{
    read_csv_rows, read_folds_csv, read_metrics_csv, read_sweep_csv, write_folds_csv, write_metrics_csv,
    write_stats_csv, write_sweep_csv, MetricsCsvRow,
};
