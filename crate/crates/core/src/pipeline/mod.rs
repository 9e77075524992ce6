//! End-to-end orchestration: frame streaming, the SLAM loop, run
//! configuration, and trajectory I/O plus evaluation.

mod config;
mod queue;
mod run;
mod trajectory;

pub use config::RunConfig;
pub use queue::{FrameQueue, PopResult};
pub use run::{run_slam, SlamOutput};
pub use trajectory::{
    evaluate_ate, read_trajectory, write_trajectory, PipelineError, TrajectoryRecord,
};
