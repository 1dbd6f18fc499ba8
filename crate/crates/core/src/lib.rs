//! Layered feature mining for image classification.
//!
//! Gabor wavelet responses are the first layer of candidate features. Each
//! layer runs Gentle AdaBoost with sigmoid regression stumps to select
//! features and build a strong classifier, then combines nearby selected
//! features pairwise into the candidates of the next layer. Multiclass
//! problems use one binary model per class.

pub mod boost;
pub mod cli;
pub mod compose;
pub mod fsutil;
pub mod gabor;
pub mod imageio;
pub mod matrix;
pub mod model;
pub mod persist;
pub mod weaklearner;
