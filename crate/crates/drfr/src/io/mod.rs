//! Dataset and model persistence plus synthetic data generation.
//!
//! Two binary formats live here: `DRFR` dataset files (labels exact,
//! features at 32-bit precision) and `DRFM` model checkpoints (everything
//! at full 64-bit precision, bit-exact round trips). CSV is the
//! human-readable interchange format for datasets and query lists.

mod binary;
mod checkpoint;
mod csv;
mod synthetic;

pub use binary::{load_binary, save_binary};
pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_VERSION};
pub use csv::{load_csv, load_queries, save_csv};
pub use synthetic::{generate_synthetic, SyntheticSpec};
