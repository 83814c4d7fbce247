//! Optimizer, training loop, evaluation and the ablation grid.

pub mod ablation;
pub mod adam;
pub mod eval;
pub mod trainer;

pub use ablation::{run_ablation_grid, run_single, AblationRow, AblationTable, SeedResult, GRID_ORDER};
pub use adam::{adam_step, AdamConfig};
pub use eval::{evaluate, evaluate_predictions, EvalReport, REPORT_SCOPES};
pub use trainer::{predict_masks, stack_batch, train, train_with, validate, EpochLog, RunLog, TrainConfig};
