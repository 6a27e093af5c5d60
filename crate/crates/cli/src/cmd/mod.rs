pub mod features;
pub mod infer;
pub mod mood;
pub mod network;
pub mod synth;
pub mod train;
