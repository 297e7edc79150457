//! Spatio-temporal point-process modeling with a learned spatial partition.
//!
//! The model partitions a 2-D region into `K` soft subregions with a sigmoid
//! decision tree and runs an individual Hawkes-type conditional intensity in
//! each subregion. Subregions interact through a `K x K` interaction matrix
//! applied to the tree scores of past event locations. Everything — tree
//! boundaries and process parameters — is trained jointly by gradient ascent
//! on a weighted log-likelihood.
//!
//! Module map:
//! - [`domain`]: events, sequences, spatial region, history windows.
//! - [`tree`]: soft decision tree scores and their exact parameter Jacobians.
//! - [`intensity`]: subregion intensities, the mixed softplus intensity, and
//!   analytic parameter gradients.
//! - [`quadrature`]: Riemann-sum compensator, joint/marginal densities, and
//!   conditional-mean next-event prediction.
//! - [`grid`]: spatial count grids for horizon forecasting.
//! - [`learn`]: weighted log-likelihood objective, negative-point sampling,
//!   ADAM, and the training loop (single- and multi-horizon).
//! - [`simulate`]: Ogata thinning sampler for synthetic ground truth.
//! - [`ingest`]: CSV catalogs, normalization, and train/val/test splits.
//! - [`eval`]: forecast metrics, baselines, and the sweep harness.
//! - [`checkpoint`] / [`config`]: persisted model and run formats.

pub mod checkpoint;
pub mod config;
pub mod domain;
pub mod error;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod intensity;
pub mod learn;
pub mod math;
pub mod quadrature;
pub mod simulate;
pub mod stats;
pub mod tree;

pub use error::{Error, Result};

use rand_chacha::ChaCha8Rng;

/// The crate-wide RNG. ChaCha8 is seedable, portable, and stream-stable, so a
/// fixed seed reproduces byte-identical runs.
pub type Rng = ChaCha8Rng;

/// Build the deterministic RNG for a run seed.
pub fn rng_for_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}
