//! Run artifacts: single-file checkpoints and CAM attention panels.

mod attention;
mod checkpoint;

pub use attention::export_attention;
pub use checkpoint::{load, save, CheckpointMeta, FORMAT_VERSION};
