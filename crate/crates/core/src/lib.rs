//! Topic-aware sequence-to-sequence response generation.
//!
//! A Twitter LDA model trained by collapsed Gibbs sampling supplies topic
//! words for each message; a bidirectional GRU encoder, a decoder with joint
//! message/topic attention, and a generation distribution biased towards
//! topic words produce the response.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod lda;
pub mod numeric;
pub mod parallel;
pub mod pipeline;
pub mod seq2seq;
pub mod topics;
pub mod training;

pub use parallel::Exec;
