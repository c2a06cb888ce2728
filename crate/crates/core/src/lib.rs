pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gcn;
pub mod mask;
pub mod sparse;
pub mod tensor;
pub mod train;

pub use autodiff::{Grouping, Tape, Var};
pub use error::{Error, Result};
pub use mask::{ChannelLayout, LatentLayer, MaskTriple, PruneMode};
pub use tensor::Tensor;
