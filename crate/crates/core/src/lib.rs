//! Community resilience rating for spatial grid cells.
//!
//! The crate turns raw geospatial layers into a per-cell matrix of twelve
//! resilience features, learns a latent representation of that matrix with a
//! stacked denoising autoencoder, clusters the representation with deep
//! embedded clustering and finally converts clusters into ordinal resilience
//! levels using random-forest feature importances as weights.
//!
//! Around that core sit the spatial tools that consume levels: queen
//! contiguity weights and Global Moran's I, what-if scenario re-rating and
//! the combined flood-risk/resilience categorisation.

pub mod dec;
pub mod error;
pub mod features;
pub mod geodata;
pub mod io;
pub mod neural;
pub mod pipeline;
pub mod rating;
pub mod rng;
pub mod sdae;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result};
pub use features::{FeatureSchema, ResilienceFeatureMatrix};
pub use geodata::{Grid, GridCell, Point, Rect};
pub use pipeline::{run_pipeline, ModelConfig, PipelineOutput};
