//! Few-shot text classification from distributional signatures.
//!
//! Word-level statistics of each episode (how frequent a word is in a source
//! pool, and how class-specific it is in the support set) drive a learned
//! attention over tokens. Attention-weighted embeddings are classified by a
//! closed-form ridge regressor that is differentiated through end to end.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod baselines;
pub mod corpus;
pub mod episodes;
mod error;
pub mod grad;
pub mod meta;
pub mod model;
pub mod ridge;
pub mod seeds;
pub mod signatures;
pub mod synth;
pub mod verify;

pub use error::Error;
