//! Evaluation measures: saliency PR curves, max-F, MAE and adaptive-threshold
//! PRF; contour ODS/OIS/AP; instance mask AP (mAP^r).

mod contour;
mod instance;
mod saliency;

pub use contour::{
    contour_benchmark, contour_threshold, image_contour_counts, interpolated_ap, match_pixels, thin, ContourCounts,
    ContourEval, CONTOUR_THRESHOLDS, MATCH_RADIUS,
};
pub use instance::{map_r, map_r_at, InstanceImage, InstancePrediction, MapR};
pub use saliency::{
    adaptive_prf, evaluate_saliency, f_beta, mae, max_f_measure, mean_curve, pr_curve, Counts, PrCurve, PrPoint, Prf,
    SaliencyEval, BETA2,
    PR_THRESHOLDS,
};
