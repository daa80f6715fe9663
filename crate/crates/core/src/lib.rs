//! Parse objects into parts by dense semantic correspondence, score regions
//! against part-name text embeddings, and evaluate part detection and
//! segmentation with COCO-style AP/AR.
//!
//! The pipeline works on precomputed features: an external exporter writes
//! per-image feature grids (a class token plus an `H x W` grid of dense
//! descriptors) and text-embedding banks in the binary format of [`io`].
//!
//! - [`correspondence`]: nearest-base retrieval, dense correspondence and
//!   part-label transfer.
//! - [`pseudo`]: the end-to-end parser, the hybrid base/novel parser and the
//!   max-score / max-size proposal aligners.
//! - [`ovscore`]: open-vocabulary region classification.
//! - [`eval`]: AP over IoU thresholds, AR@k, base/novel split reporting.
//! - [`cli`]: the `ovparts` command-line front end.

pub mod cli;
pub mod correspondence;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod math;
pub mod ovscore;
pub mod pseudo;
pub mod taxonomy;

pub use error::{Error, Result};
pub use math::{cosine_similarity, l2_normalize, resample_grid_nearest, Embedding, FeatureGrid, Grid, LabelGrid};
pub use taxonomy::{CategoryId, PromptTemplate, Taxonomy, TaxonomySplit};
