//! Optimization, single-stage training and the resumable experiment grid.

mod grid;
mod optim;
mod record;
mod rundir;
mod stage;

pub use grid::{
    format_mean_std, parallel_map, run_grid, summary_table, AxesConfig, CvConfig, DataConfig, GridConfig, GridOptions,
    GridOutcome, ScenePretext, VariantConfig,
};
pub use rundir::{write_atomic, RunDirectory, INDEX_FILE, RUN_DIRS, RUN_DIR_ENV};
pub use record::{format_run_table, parse_run_table, RunRecord, RunStatus, METRICS, RUN_COLUMNS};
pub use optim::{cosine_restart_lr, early_stop, lars_local_lr, EarlyStopping, Lars, LarsConfig, ScheduleConfig, StopDecision};
pub use stage::{run_stage, EpochMetrics, StageConfig, StageOutcome, StageSpec, MAX_NONFINITE_STEPS, SWAV_PROTOTYPES};
