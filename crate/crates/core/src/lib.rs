pub mod error;
pub mod lowrank;
pub mod matting;
pub mod metrics;
pub mod segmenter;
pub mod config;
pub mod kvol;
pub mod pipeline;
