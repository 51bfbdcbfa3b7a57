pub mod camera;
pub mod error;
pub mod fuse;
pub mod ingest;
pub mod knn;
pub mod metrics;
pub mod pc2d;
pub mod pipeline;
pub mod pose;
pub mod render;
pub mod rng;
pub mod scene_file;
pub mod segmenter;
pub mod synthetic;
pub mod tensor;
pub mod vgo;

pub use error::{Error, Result};
