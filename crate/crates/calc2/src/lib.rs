//! File formats, image IO, synthetic corpora, training driver, evaluation
//! and loop-closure commands for the calc2 toolkit.

pub mod config;
pub mod corpus;
pub mod describe;
pub mod evaluate;
pub mod formats;
pub mod image_io;
pub mod selftest;
pub mod sequence;
pub mod training;
