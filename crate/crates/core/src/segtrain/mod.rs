//! Training loops, schedules, EMA teachers and checkpoints.

mod checkpoint;
mod config;
mod ema;
mod optim;
mod train;

pub use checkpoint::{
    Checkpoint, CheckpointManifest, InferenceRole, ModelKind, INDEX_FILE, MANIFEST_FILE, TOOLKIT_VERSION,
    WEIGHTS_FILE,
};
pub use config::{lr_schedule, EmaMode, OptimizerKind, TrainConfig};
pub use ema::{ema_update, ema_update_from_previous};
pub use optim::Optimizer;
pub use train::{
    load_images, predict_category, predict_label, train_selftrain, train_supervised, train_with_teacher, train_with_teacher_mapped, InputTransform, StepLog,
    TrainOutcome, TrainSet,
};

/// Writes `step,lr,loss,target_loss,pseudo_fraction` rows.
pub fn write_train_log(path: &std::path::Path, log: &[StepLog]) -> crate::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::Error::format(path, e))?;
    for row in log {
        w.serialize(row).map_err(|e| crate::Error::format(path, e))?;
    }
    w.flush().map_err(|e| crate::Error::io(path, e))
}
