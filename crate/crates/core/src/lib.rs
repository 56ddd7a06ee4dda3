//! Prompting, evaluation and augmentation harness for classifying how
//! clearly political interview answers respond to the question asked.

pub mod augmentation;
pub mod cache;
pub mod dataset;
pub mod ensemble;
pub mod llm_client;
pub mod metrics;
pub mod numerics;
pub mod parallel;
pub mod prediction_file;
pub mod prompting;
pub mod selftest;
pub mod sweep;
pub mod taxonomy;
