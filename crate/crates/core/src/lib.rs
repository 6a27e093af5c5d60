//! Signals from time-binned text streams: n-gram feature selection with
//! bootstrapped LASSO, bagged regression trees, lexicon mood scores and
//! content-similarity networks between locations.
pub mod bolasso;
pub mod cart;
pub mod error;
pub mod geonet;
pub mod mood;
pub mod nowcast;
pub mod regression;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod text;
pub mod vsm;

pub use error::{Error, Result};
