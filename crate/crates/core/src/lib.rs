//! One-shot network behavioral fingerprinting.
//!
//! A ConvLSTM autoencoder learns character-level encodings of packet info
//! strings. A one-class prototypical network then embeds a 20-packet sample
//! of a target device into a Target prototype, embeds all-NUL packets into
//! a Null prototype, and classifies every packet of a stream by its
//! distance to the two.
//!
//! ```no_run
//! use netprint::{codec, matcher, synth, trainer};
//!
//! let corpus = synth::make_corpus(8, 400, 0.6, 0).traces;
//! let ids: Vec<String> = corpus.iter().map(|t| t.device_id.clone()).collect();
//! let split = trainer::split_devices(&ids, 0.5, 0).unwrap();
//! let run = trainer::train(&corpus, &split, &trainer::TrainConfig::default()).unwrap();
//! let model = matcher::FingerprintModel::from_trace(&corpus[0], &run.network, 0.5).unwrap();
//! let scan = matcher::scan_lines(&model, &corpus[1].lines);
//! println!("{scan}");
//! # let _ = codec::WINDOW_LEN;
//! ```

pub mod cli;
pub mod codec;
pub mod convlstm;
pub mod diff;
pub mod format;
pub mod matcher;
pub mod network;
pub mod protonet;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use scalar::Scalar;

pub type Tensor64 = diff::Tensor<f64>;
pub type Tensor32 = diff::Tensor<f32>;
pub type ParamStore64 = diff::ParamStore<f64>;
pub type ParamStore32 = diff::ParamStore<f32>;
pub type Network64 = network::Network<f64>;
pub type Network32 = network::Network<f32>;
pub type FingerprintModel64 = matcher::FingerprintModel<f64>;
pub type FingerprintModel32 = matcher::FingerprintModel<f32>;
