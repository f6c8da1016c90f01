//! Time-series imputation with a hypernetwork-predicted implicit neural
//! representation.
//!
//! A transformer reads the observed cells of a window and emits the full
//! parameter set of a continuous function of time, built from a polynomial
//! trend, a Fourier seasonal part, and a grouped residual MLP with sine
//! activations. Missing values are read off that function. See the guide
//! under `book/` for concept chapters; every code listing there compiles
//! and runs as a doc-test of this crate.
//!
//! ```
//! use imputeinr::{data, synth, train, Config};
//!
//! let mut cfg = Config::default();
//! cfg.conv_channels = 8;
//! cfg.d_model = 32;
//! cfg.n_blocks = 2;
//! cfg.ff_mult = 2;
//! cfg.epochs = 2;
//! cfg.mask_rate = 0.5;
//! cfg.validate()?;
//!
//! let series = synth::gen_trend_sinusoid(0);
//! let (model, _) = train::train(&cfg, &series)?;
//!
//! let (holes, _) = data::apply_random_mask(&series, 0.3, 42);
//! let out = model.impute_window(&holes)?;
//! assert_eq!(out.filled.shape(), (series.n_vars(), series.len()));
//! # Ok::<(), imputeinr::Error>(())
//! ```

pub mod adam;
pub mod checkpoint;
pub mod cluster;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inr;
pub mod matrix;
pub mod model;
pub mod svg;
pub mod synth;
pub mod tape;
pub mod train;
pub mod transformer;

pub use config::Config;
pub use error::{Error, Result};

// Each chapter of the guide is attached here as documentation so that
// `cargo test --doc` executes its code listings. A listing that drifts
// from the library fails the build, one module per chapter to keep the
// failure location readable.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/inr.md")]
    mod inr {}
    #[doc = include_str!("../../../book/src/hypernetwork.md")]
    mod hypernetwork {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/determinism.md")]
    mod determinism {}
}
