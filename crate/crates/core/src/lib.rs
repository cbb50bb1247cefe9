//! Feature enrichment of tabular datasets with text-embedding features, and an
//! ablation harness that measures what those features add to ensemble classifiers.
//!
//! Pipeline per dataset: preprocess ([`data`]) → serialize rows to text
//! ([`textualize`]) → embed ([`embeddings`]) → PCA and importance-based selection
//! ([`reduction`]) → cross-validated evaluation of seven feature subsets with
//! three classifier families ([`classifiers`], [`evaluation`], [`ablation`]) →
//! CSV bundle and SVG figures ([`report`]).

pub mod ablation;
pub mod classifiers;
pub mod data;
pub mod embeddings;
pub mod evaluation;
pub mod matrix;
pub mod reduction;
pub mod report;
pub mod textualize;

pub use matrix::Matrix;
