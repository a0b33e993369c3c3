//! Alternating adversarial optimization of the segmentation network and the
//! two discriminators, with checkpointing, logging and the variant ablation.

mod ablation;
mod checkpoint;
mod run;
mod state;
mod step;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Blob, Checkpoint,
    FORMAT_VERSION, MAGIC,
};
pub use run::{
    checkpoint_path, load_training_corpora, read_epoch_log, read_step_log, train, train_on,
    EpochSummary, StepRecord, TrainOptions, TrainOutcome, CHECKPOINT_DIR, EPOCH_LOG, STEP_LOG,
};
pub use ablation::{run_ablation, run_variants, TestSets, VariantRun, SOURCE_TEST, TARGET_TEST};
pub use state::TrainState;
pub use step::{discriminator_step, segmentation_step, train_step};
