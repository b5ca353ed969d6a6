//! Audiovisual recurrent network for supervised video summarization.
//!
//! Per-frame visual and audio features pass through a two-stream recurrent
//! encoder, an adaptive fusion gate, a fusion recurrent layer and a
//! self-attention encoder; a sigmoid head scores every timestep. Shots come
//! from kernel temporal segmentation and a knapsack picks the summary.

pub mod attention;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod pipeline;
pub mod segmentation;
pub mod synthetic;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Matrix;
