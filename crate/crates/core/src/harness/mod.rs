//! Synthetic data, training loop, evaluation metrics, reports and motion
//! categories.

pub mod metrics;
pub mod motion;
pub mod report;
pub mod synth;
pub mod train;

pub use metrics::{endpoint_error, interior_mse};
pub use motion::{average_iou, category_for_iou, motion_category, MotionCategory, TrackAnnotation};
pub use synth::{generate_synthetic, rotation_flow, Motion, Pattern, SynthSequence, SynthSpec};
pub use train::{evaluate, evaluation_border, train_iff, train_on, Evaluation, TrainConfig, TrainingReport};
