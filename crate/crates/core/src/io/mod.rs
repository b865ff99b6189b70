//! Configuration, checkpoints, field files and evaluation metrics.

pub mod checkpoint;
pub mod config;
pub mod field;
pub mod metrics;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::RunConfig;
pub use field::{export_field, export_snapshot, snapshot_file_name, field_from_records, import_field_csv, read_field_records, FieldFormat, FieldRecord};
pub use metrics::{field_relative_l2, melt_pool_dims, relative_l2, MeltPoolDims};
