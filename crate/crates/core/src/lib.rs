//! Event-camera data pipeline and RGB–event fusion segmentation networks
//! at desk scale.
//!
//! * [`events`]: frame-pair event simulation, per-polarity timestamp
//!   normalization, discretized event volumes, accumulated event frames
//!   and the EVT1 / VOL1 file formats.
//! * [`tensor`]: a dense f64 tensor with a reverse-mode tape, Adam and
//!   cosine annealing, and the CKPT checkpoint format.
//! * [`model`]: attention (EAM) and gate (EGM) fusion modules, pyramid
//!   pooling heads and the sparse-to-dense / dense-to-sparse networks.
//! * [`train`]: the joint-loss training loop and evaluation.
//! * [`metrics`]: confusion matrices with Acc / mIoU / fwIoU.
//! * [`scenegen`]: the synthetic moving-shapes corpus.
//! * [`ablation`]: time-bin and event-intensity sweeps.

pub mod ablation;
pub mod error;
pub mod events;
pub mod image;
pub mod metrics;
pub mod model;
pub mod par;
pub mod scenegen;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
