//! Decoding, n-gram language modelling and evaluation for code-switched
//! speech recognition.

pub mod augment;
pub mod corpus;
pub mod cslg;
pub mod ctc;
pub mod error;
pub mod langid;
pub mod lm;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
