//! Household day-ahead load forecasting driven by appliance behavior
//! association mining.
//!
//! The pipeline runs in stages, each a module here:
//!
//! 1. [`data`]: ingest sub-metered channels, resample, normalize.
//! 2. [`events`]: threshold power into ON/OFF runs and start-up events.
//! 3. [`association`]: count co-activations and build the association matrix.
//! 4. [`clustering`]: spectral clustering of the association graph.
//! 5. [`features`]: distance-correlation screening of input features.
//! 6. [`forecaster`]: conv + GRU day-ahead model, one per cluster.
//! 7. [`evaluation`]: cluster-sum versus overall forecast comparison.
//!
//! [`synthetic`] generates households with planted structure and
//! [`pipeline`] wires the stages together through on-disk artifacts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod clustering;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod events;
pub mod features;
pub mod forecaster;
pub mod pipeline;
pub mod synthetic;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/events.md")]
    mod events {}
    #[doc = include_str!("../../../book/src/association.md")]
    mod association {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/forecaster.md")]
    mod forecaster {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
