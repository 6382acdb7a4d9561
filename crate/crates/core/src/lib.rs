//! Carpet-bombing DDoS detection over flow records.
//!
//! Flows are sorted and binned into fixed-length sequences, embedded by a
//! small MLP tokenizer, mixed by a transformer encoder and classified per
//! flow.

pub mod alert;
pub mod backbone;
pub mod error;
pub mod evaluator;
pub mod flow;
pub mod head;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod sequentializer;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
