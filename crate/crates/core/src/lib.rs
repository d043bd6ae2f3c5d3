/*!
Tabular prediction with semi-permeable attention.

A self-contained library and CLI for training a small tabular transformer
whose attention is gated by per-feature importance: an unoptimizable mask
lets information flow only from more-informative features to less-informative
ones, attenuated initialization starts the network as a near-identity map
over feature tokens, and two interpolation augmentations (embedding-dimension
swapping and importance-weighted feature swapping) supplement scarce training
data. Everything runs on a built-in reverse-mode autodiff engine over dense
`f64` tensors, verified by finite-difference gradient checks.
*/

pub mod augment;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod rotation;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
