//! Inference latency measurement.

use std::time::Instant;

use fastsal_core::net::Model;
use fastsal_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_RUNS: usize = 10;

/// Reference latency of this architecture on other hardware, recorded for
/// context and never compared against.
pub const REFERENCE_NOTE: &str = "reference: 37 ms per 240x240 image on a server Xeon CPU; hardware dependent, not a target";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub cpu_model: Option<String>,
}

impl Machine {
    pub fn current() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo").ok().and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        });
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub input_size: (usize, usize),
    pub variant: u8,
    pub warmup_runs: usize,
    pub timed_runs: usize,
    /// Wall time of every timed run.
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub p95_ms: f64,
    /// Worker threads; each runs its own single-image forward pass, so a
    /// timed run covers `threads` images.
    pub threads: usize,
    pub params: usize,
    pub macs: u64,
    pub flops: u64,
    pub machine: Machine,
    pub note: String,
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Times `runs` forward passes after `warmup` untimed ones.
pub fn run_bench(model: &Model<f32>, runs: usize, warmup: usize, threads: usize, seed: u64) -> Result<BenchReport> {
    if runs < MIN_RUNS {
        return Err(Error::Usage(format!("--runs must be at least {MIN_RUNS}, got {runs}")));
    }
    if threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let (h, w) = model.config.input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f32>> = (0..threads).map(|_| Tensor::uniform(&[1, 3, h, w], -1.0, 1.0, &mut rng)).collect();
    let once = || -> Result<f64> {
        let start = Instant::now();
        if threads == 1 {
            model.forward(&inputs[0])?;
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = inputs.iter().map(|x| s.spawn(move || model.forward(x))).collect();
                handles
                    .into_iter()
                    .try_for_each(|hd| hd.join().expect("forward pass panicked").map(drop))
            })?;
        }
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    for _ in 0..warmup {
        once()?;
    }
    let times_ms = (0..runs).map(|_| once()).collect::<Result<Vec<f64>>>()?;
    let mut sorted = times_ms.clone();
    sorted.sort_by(f64::total_cmp);
    let cost = model.cost((h, w))?;
    Ok(BenchReport {
        input_size: (h, w),
        variant: model.config.variant,
        warmup_runs: warmup,
        timed_runs: runs,
        median_ms: median(&sorted),
        mean_ms: times_ms.iter().sum::<f64>() / runs as f64,
        p95_ms: percentile(&sorted, 95.0),
        times_ms,
        threads,
        params: cost.params,
        macs: cost.macs,
        flops: cost.flops,
        machine: Machine::current(),
        note: REFERENCE_NOTE.into(),
    })
}
