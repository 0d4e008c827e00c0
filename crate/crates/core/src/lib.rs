//! Quality-estimation toolkit: pseudo-MQM data synthesis, a joint
//! sentence/word QE model, ensembling, error-span conversion and evaluation.

pub mod corpus;
pub mod corruptor;
pub mod ensemble;
pub mod error;
pub mod fixer;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod toy_qe;

pub use error::{QeError, Result};
