//! Comparable-sales property valuation.
//!
//! Predicts a property's value as the similarity-weighted mean of nearby
//! sales, with the similarity function itself tuned by an evolutionary
//! search.

pub mod dataset;
pub mod evolution;
pub mod geo_index;
pub mod metrics;
pub mod predictor;
pub mod similarity;
pub mod synthgen;

pub use dataset::{AttributeSchema, GeoPoint, Property, Scaler};
pub use evolution::{evolve, EaConfig, SearchSpace};
pub use geo_index::{GeoIndex, PreselectMode};
pub use predictor::{predict, CaseBase, Method, PredictionWitness};
pub use similarity::{PostSelect, SimilarityGenome};
