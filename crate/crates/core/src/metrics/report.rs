use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auc::{auc_borji, auc_judd, sauc};
use crate::metrics::emd::{emd_auto, DEFAULT_MAX_CELLS};
use crate::metrics::maps::{DensityMap, FixationData};
use crate::metrics::scores::{cc, default_baseline, finite, info_gain, kl_div, nss, sim, DEFAULT_EPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Kl,
    Cc,
    Nss,
    Sim,
    AucJudd,
    AucBorji,
    Sauc,
    Ig,
    Emd,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::Kl,
        Metric::Cc,
        Metric::Nss,
        Metric::Sim,
        Metric::AucJudd,
        Metric::AucBorji,
        Metric::Sauc,
        Metric::Ig,
        Metric::Emd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Kl => "kl",
            Metric::Cc => "cc",
            Metric::Nss => "nss",
            Metric::Sim => "sim",
            Metric::AucJudd => "auc_judd",
            Metric::AucBorji => "auc_borji",
            Metric::Sauc => "sauc",
            Metric::Ig => "ig",
            Metric::Emd => "emd",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == lower)
            .ok_or_else(|| Error::InvalidArgument {
                op: "metric",
                detail: format!("unknown metric {s:?}"),
            })
    }
}

/// Knobs of the metric suite; all are recorded in the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub kl_eps: f64,
    pub ig_eps: f64,
    pub borji_splits: usize,
    /// Negatives per split; `None` uses the number of fixations.
    pub borji_negatives: Option<usize>,
    pub sauc_splits: usize,
    pub emd_max_cells: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            kl_eps: DEFAULT_EPS,
            ig_eps: DEFAULT_EPS,
            borji_splits: 100,
            borji_negatives: None,
            sauc_splits: 100,
            emd_max_cells: DEFAULT_MAX_CELLS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue {
    Value(f64),
    Unavailable(String),
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            MetricValue::Unavailable(_) => None,
        }
    }

    fn from_result(r: Result<f64>) -> Self {
        match r {
            Ok(v) => MetricValue::Value(v),
            Err(e) => MetricValue::Unavailable(e.to_string()),
        }
    }
}

/// One evaluated image.
pub struct EvalInput<'a> {
    pub id: &'a str,
    pub pred: &'a DensityMap,
    pub gt: &'a DensityMap,
    pub fixations: Option<&'a FixationData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub values: BTreeMap<String, MetricValue>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: MetricConfig,
    pub metrics: Vec<Metric>,
    pub images: Vec<ImageMetrics>,
    /// Mean over the images where the metric is available.
    pub mean: BTreeMap<String, MetricValue>,
}

fn needs_fixations(f: Option<&FixationData>) -> Result<&FixationData> {
    f.ok_or_else(|| Error::Unavailable("no fixation data for this image".into()))
}

/// Evaluates every requested metric on every input. Shuffled AUC draws its
/// negatives from the fixations of the other inputs.
pub fn evaluate(inputs: &[EvalInput<'_>], metrics: &[Metric], cfg: &MetricConfig) -> Result<MetricReport> {
    let mut images = Vec::with_capacity(inputs.len());
    for (k, inp) in inputs.iter().enumerate() {
        inp.pred.same_size(inp.gt, "evaluate")?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        let (h, w) = inp.pred.size();
        let mut values = BTreeMap::new();
        let mut notes = Vec::new();
        for &m in metrics {
            let r = match m {
                Metric::Kl => kl_div(inp.pred, inp.gt, cfg.kl_eps),
                Metric::Cc => cc(inp.pred, inp.gt),
                Metric::Sim => sim(inp.pred, inp.gt),
                Metric::Nss => needs_fixations(inp.fixations).and_then(|f| nss(inp.pred, f)),
                Metric::AucJudd => needs_fixations(inp.fixations).and_then(|f| auc_judd(inp.pred, f)),
                Metric::AucBorji => needs_fixations(inp.fixations)
                    .and_then(|f| auc_borji(inp.pred, f, cfg.borji_splits, cfg.borji_negatives, &mut rng)),
                Metric::Sauc => needs_fixations(inp.fixations).and_then(|f| {
                    let others: Vec<FixationData> = inputs
                        .iter()
                        .enumerate()
                        .filter(|&(o, _)| o != k)
                        .filter_map(|(_, o)| o.fixations.cloned())
                        .filter(|o| o.size() == (h, w))
                        .collect();
                    sauc(inp.pred, f, &others, cfg.sauc_splits, &mut rng)
                }),
                Metric::Ig => needs_fixations(inp.fixations)
                    .and_then(|f| info_gain(inp.pred, f, &default_baseline(h, w), cfg.ig_eps)),
                Metric::Emd => emd_auto(inp.pred, inp.gt, cfg.emd_max_cells).map(|e| {
                    if e.downsampled {
                        notes.push(format!("emd computed on a {}x{} area-averaged grid", e.grid.0, e.grid.1));
                    }
                    e.value
                }),
            }
            .and_then(|v| finite(m.name(), v));
            values.insert(m.name().to_string(), MetricValue::from_result(r));
        }
        images.push(ImageMetrics {
            id: inp.id.to_string(),
            values,
            notes,
        });
    }
    let mut mean = BTreeMap::new();
    for &m in metrics {
        let vals: Vec<f64> = images.iter().filter_map(|im| im.values[m.name()].value()).collect();
        let v = if vals.is_empty() {
            MetricValue::Unavailable("unavailable for every image".into())
        } else {
            MetricValue::Value(vals.iter().sum::<f64>() / vals.len() as f64)
        };
        mean.insert(m.name().to_string(), v);
    }
    Ok(MetricReport {
        config: cfg.clone(),
        metrics: metrics.to_vec(),
        images,
        mean,
    })
}
