//! Quantitative evaluation: verification scoring (cosine similarity, ROC,
//! AUC, best-threshold accuracy), Hu-moment heritability maps over facial
//! regions, and a 2-D projection of feature sets.

pub mod hu;
pub mod project;
pub mod verify;

pub use hu::{
    heritability_map, hu_moments, log_magnitude, rasterize_region, HeritabilityMap, LandmarkSet,
    Raster, Region, REGIONS,
};
pub use project::{project_2d, top_two_components, Projection};
pub use verify::{
    cosine_distance, cosine_similarity, embedding_similarity_report, roc_and_accuracy, PairLabel,
    RocCurve, ScoredPair,
};
