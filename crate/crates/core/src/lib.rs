//! Translate English questions into SPARQL with sequence-to-sequence models.
//!
//! The crate is organised as a pipeline:
//!
//! * [`codec`] turns SPARQL text into flat token sequences and back;
//! * [`kb`] answers assistant queries from a local triple store or a remote
//!   endpoint;
//! * [`corpus`] instantiates question/query templates, tokenizes, splits and
//!   persists parallel corpora;
//! * [`autodiff`] is a small reverse-mode tensor engine, generic over the
//!   float type;
//! * [`nmt`] builds recurrent, convolutional and transformer translators on
//!   top of it, trains them and decodes with beam search;
//! * [`metrics`] scores translations (BLEU, perplexity, exact match, token F1).

pub mod autodiff;
pub mod codec;
pub mod corpus;
pub mod kb;
pub mod metrics;
pub mod nmt;
mod scalar;

pub use scalar::Scalar;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type Tensor64 = autodiff::Tensor<f64>;
pub type ParamSet32 = autodiff::ParamSet<f32>;
pub type ParamSet64 = autodiff::ParamSet<f64>;
pub type Model32 = nmt::Model<f32>;
pub type Model64 = nmt::Model<f64>;
pub type Checkpoint32 = nmt::Checkpoint<f32>;
pub type Checkpoint64 = nmt::Checkpoint<f64>;
