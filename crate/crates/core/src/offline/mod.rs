//! Offline evaluation over cached task dumps.

mod dataset;
mod gold;
mod import;
mod metrics;
mod run;

pub use dataset::{gold_operation, load_canonical, load_dataset, DatasetError, OfflineStep, OfflineTask, RawAction, RawOperation, RawTask, Split, TASKS_FILE};
pub use gold::gold_script;
pub use import::{cache_dir, import_jsonl, is_import_layout};
pub use metrics::{
    difficulty_bucket, difficulty_histogram, element_accuracy, macro_aggregate, operation_f1, step_success, task_success, Aggregates, Difficulty, StepScore,
};
pub use run::{run_offline, EvalReport, OfflineError, OfflineOptions, ReportHeader, StepResult, TaskResult, STEP_SUCCESS_RULE};
