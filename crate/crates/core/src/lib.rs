//! Competitive multi-scale convolution networks on the CPU.
//!
//! The building block is a module of parallel same-padded convolutions at
//! several filter sizes, each batch-normalized, joined by a maxout unit so
//! the filters compete: only the strongest response (and its gradient)
//! passes. Variants swap the maxout for channel concatenation with ReLU
//! (the inception arrangement), collapse the scales to the largest filter,
//! or replace the implicit deterministic center-masking with stochastic
//! DropConnect.
//!
//! The crate covers the whole loop at desk scale: tensors and layers with
//! exact forward/backward contracts, declarative network specs and presets,
//! an SGD trainer (momentum 0.9, weight decay 5e-4, multi-step decay from
//! 0.1 to 0.001) with seeded determinism, bit-exact dataset loaders, and
//! the analysis instruments (parameter counts, mask arithmetic,
//! gamma-importance, winner histograms, filter cosine similarity).
//!
//! Training is reproducible by construction: a seed fully determines
//! initialization, shuffling and mask draws, all floating-point reductions
//! run in a fixed order regardless of thread count, and transcendentals go
//! through software implementations, so checkpoints and result files are
//! byte-identical across runs.
//!
//! Parallel execution uses rayon when the default `parallel` feature is on;
//! without it everything runs sequentially. With the feature enabled,
//! [`parallel::set_parallel`] switches between the two paths at runtime
//! (the benchmark suite compares them in one binary).

pub mod analysis;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod net;
pub mod parallel;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use net::{Network, NetworkSpec, PresetName, WidthProfile};
pub use rng::SplitMix64;
pub use scalar::Scalar;
pub use tensor::Tensor4;
