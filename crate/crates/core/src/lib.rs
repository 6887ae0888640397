//! Multi-filter Gaussian mixture autoencoder (MGMAE) for sequence-to-sequence
//! tasks.
//!
//! The pipeline: an attention encoder-decoder is trained as an autoencoder on
//! source sentences; the encoder's final hidden states (the latent
//! representations) are clustered with a diagonal Gaussian mixture fit by EM;
//! one decoder ("filter") per mixture component is then trained on the
//! target sequences of its cluster, with the encoder frozen. At inference a
//! sentence is routed to the filter of its most probable component, or all
//! filters are mixed by posterior weight.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod filterbank;
pub mod gmm;
pub mod gradcheck;
pub mod harness;
pub mod latent;
pub mod layers;
pub mod metrics;
pub mod optim;
pub mod seq2seq;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
