//! Quantized-LSTM speech decoding engine.
//!
//! The crate covers fixed-point number formats ([`quant`]), a reference LSTM
//! engine ([`rnn`]), a cycle-accurate model of a PE-array accelerator
//! ([`hwsim`]), CTC prefix-tree beam search ([`decoder`]), an ARPA back-off
//! word model ([`wordlm`]), the log-mel front end ([`frontend`]) and the model
//! container, report format and end-to-end pipeline used by the binaries.

pub mod quant;
pub mod rnn;
pub mod hwsim;
pub mod decoder;
pub mod charlm;
pub mod frontend;
pub mod container;
pub mod report;
pub mod pipeline;
pub mod wordlm;
