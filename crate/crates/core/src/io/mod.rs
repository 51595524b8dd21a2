//! On-disk formats: FTZ tensors and parameter checkpoints.

mod checkpoint;
mod ftz;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use ftz::{decode_ftz, encode_ftz, read_ftz, write_ftz};
