//! The data owner's optimization: warm-up followed by the five-block
//! alternating loop, with parameters outside each block frozen.

mod blocks;
mod config;
mod trainer;

pub use blocks::{block_graph, block_loss, block_step, Block, BlockBatch, BlockParams, NLL_FLOOR};
pub use config::{IterationUnit, TrainConfig, WarmupConfig};
pub use trainer::{
    arch_for, cross_entropy, pretrain, train, utility_accuracy, write_metrics_csv, BatchStream, MetricRow, Splits,
    TrainOutcome, Trainer,
};
