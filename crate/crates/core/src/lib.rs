//! Deterministic finite-support approximations of Brownian motion in the
//! Hölder rough-path topology, and their use in solving and probing the
//! support of McKean–Vlasov equations.
//!
//! * [`wavelet`]: Haar/Schauder coordinates and the sequence Hölder norm.
//! * [`gaussian`]: Brownian sampling, truncation and truncation rates.
//! * [`quant`]: Lloyd quantizers in the Hölder norm and product codebooks.
//! * [`roughpath`]: level-2 rough paths, their metrics and p-variation.
//! * [`mckean`]: frozen-measure ODE solver and interacting particle systems.
//! * [`support`]: skeleton paths and distance-to-support search.
//! * [`wasserstein`]: exact optimal transport between finite-support laws.
//! * [`experiments`]: the rate studies exposed by the command line tool.

pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod mckean;
pub mod measure;
pub mod neldermead;
pub mod quant;
pub mod roughpath;
pub mod stats;
pub mod support;
pub mod wasserstein;
pub mod wavelet;

pub use error::{Error, Result};
pub use gaussian::{BmSampler, RateRow, RateTable};
pub use measure::{MeasurePath, WeightedMeasure, WeightedPathMeasure};
pub use quant::{Codebook1D, ProductCodebook};
pub use roughpath::{GroupElt2, Sig2Path};
pub use wavelet::{CoeffPath, DyadicIndex, SampledPath};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
