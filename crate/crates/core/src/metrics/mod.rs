//! Saliency metrics and the normalized-average model ranking.

mod auc;
mod emd;
mod maps;
mod ranking;
mod report;
mod scores;

pub use auc::{auc_borji, auc_judd, pair_auc, sample_from_pool, sample_uniform_pixels, sauc, shuffled_pool};
pub use emd::{emd, emd_auto, transport, EmdResult, DEFAULT_MAX_CELLS, DOWNSAMPLE_SIDE};
pub use maps::{DensityMap, FixationData};
pub use ranking::{normalized_average, Column, ComparisonTable, Orientation, RankedRow, Row};
pub use report::{evaluate, EvalInput, ImageMetrics, Metric, MetricConfig, MetricReport, MetricValue};
pub use scores::{cc, default_baseline, info_gain, kl_div, nss, sim, DEFAULT_EPS};
