//! Toolkit for measuring agreement between vessel annotations: exact
//! distance fields, Zhang-Suen skeletons, clDice and its distance-thresholded
//! variant, Frangi/Sato vesselness, patch sampling, rating-set construction
//! and rating analysis.

pub mod annotation;
pub mod dataset;
pub mod distance;
pub mod error;
pub mod metrics;
pub mod patches;
pub mod raster;
pub mod rating;
pub mod skeleton;
pub mod stats;
pub mod synthetic;
pub mod vesselness;

pub use annotation::{build_annotation, AnnotationSet, CenterlineSource};
pub use distance::{exact_edt, signed_edge_distance, squared_edt, tube_mask, DistanceField};
pub use error::{Error, Result};
pub use metrics::{
    cldice, dataset_summary, default_thresholds, modified_cldice, threshold_grid, threshold_sweep,
    AnnotationPair, ClDiceResult, Metric, PairSummary, SweepCurve, Variant,
};
pub use patches::{
    build_rating_set, disagreement_components, sample_patches, AnnotatedImage, Category, Circle,
    Patch, Quotas, RatingItem, RatingSet,
};
pub use raster::{no_feature_sentinel, rotate_point, BinaryMask, GrayImage};
pub use rating::{
    agreement_table, intra_rater_consistency, AgreementTable, Answer, RatingResponse, Reference,
};
pub use skeleton::{centerline_pixels, thin, Skeleton};
pub use vesselness::{frangi, sato, FrangiParams, Polarity, ScaleParams};
