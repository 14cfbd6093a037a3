pub mod ablation;
pub mod analysis;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod freq;
pub mod gradsuite;
pub mod image_io;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Float, Graph, Shape, Tensor, Var};
