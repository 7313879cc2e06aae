//! Optimization of a Gaussian cloud against measured k-space.

mod adam;
mod adaptive;
mod config;
mod init;
mod run;

pub use adam::{adam_step, adam_update, AdamMoments};
pub use adaptive::{
    clone_children, densify, long_axis_children, prune, sampled_split_children, DensifyStats,
    LONG_AXIS_DENSITY_FACTOR, LONG_AXIS_SHORT_FACTOR, SPLIT_SCALE_DIVISOR,
};
pub use config::{AdamParams, GroupRates, LearningRates, SplitMode, TrainConfig};
pub use init::{init_cloud, mean_neighbor_distances};
pub use run::{train, train_from_cloud, TrainOutput, TrainState};
