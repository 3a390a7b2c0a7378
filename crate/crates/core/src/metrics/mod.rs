//! Fusion quality metrics (CC, SCD, PSNR, Nabf, NLPD) and the batch evaluator.
//!
//! All metrics take the fused image first, then the visible and infrared sources. Inputs
//! are converted to unit range internally; PSNR is reported on the 8-bit scale.

mod correlation;
mod nabf;
mod nlpd;
mod report;

pub use correlation::{cc, psnr, psnr_from_mse, scd, PSNR_CAP_DB};
pub use nabf::{nabf, WEIGHT_EXPONENT};
pub use nlpd::{nlpd, nlpd_with_levels, DEFAULT_LEVELS, SIGMA as NLPD_SIGMA};
pub use report::{
    evaluate, png_stems, score_triple, MetricReport, MetricRow, ReportMeta, CSV_HEADER,
};
