//! Datasets: digit sources, Colored-MNIST generation, discrete joint
//! sources, stratified splits, the `VLDS` container and image ingestion.

mod colored;
mod container;
mod dataset;
mod digits;
mod ingest;
mod joint;

pub use colored::{color_of, generate_colored_mnist, ColorDistribution, Roles, COLOR_NAMES};
pub use container::{decode, encode, load_dataset, save_dataset};
pub use dataset::{apportion, frequencies, split, Features, InputLayout, LabeledDataset, SplitTag};
pub use digits::{GrayDigits, DIGIT_SIDE};
pub use ingest::{ingest_image_table, INGEST_SIDE};
pub use joint::{DiscreteJoint, JointSampler, MAX_ALPHABET};
