pub mod cli;
pub mod codec;
pub mod degrade;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod gallery;
pub mod geometry;
pub mod image;
pub mod protocol;
pub mod quality;
pub mod reduce;
pub mod similarity;
pub mod synth;
