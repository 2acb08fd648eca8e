//! Wall-clock step timing at a fixed geometry, with warmup and median/IQR
//! summary. Benchmarks run serially on a declared thread count.

use super::BenchReport;
use crate::data::IGNORE_LABEL;
use crate::error::{Error, Result};
use crate::models::{build_model, ArchitectureId, Model, ModelConfig};
use crate::tensor::{Graph, Parameterized, Tensor};
use crate::train::loss::combined_loss;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Stats {
    pub fn from_durations(mut ms: Vec<f64>) -> Stats {
        ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |f: f64| -> f64 {
            let pos = f * (ms.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            ms[lo] * (1.0 - w) + ms[hi] * w
        };
        Stats {
            median: q(0.5),
            q1: q(0.25),
            q3: q(0.75),
        }
    }

    pub fn overlaps(&self, other: &Stats) -> bool {
        self.q1 <= other.q3 && other.q1 <= self.q3
    }
}

pub struct TimingRecord {
    pub report: BenchReport,
}

/// Time `reps` forward passes and forward+backward steps at batch 1 on the
/// config geometry (after `warmup` unrecorded runs of each).
pub fn benchmark_model(
    arch: ArchitectureId,
    config: &ModelConfig,
    reps: usize,
    warmup: usize,
    threads: usize,
) -> Result<TimingRecord> {
    if reps < 3 {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs reps >= 3, got {reps}"
        )));
    }
    let model: Model<f32> = build_model(arch, config)?;
    let (h, w) = config.input_hw;
    let x = Tensor::<f32>::from_fn(&[1, config.in_channels, h, w], |i| {
        ((i % 97) as f32) * 0.01 - 0.5
    });
    let labels: Arc<Vec<u32>> = Arc::new(
        (0..h * w)
            .map(|i| (i % config.num_classes) as u32)
            .collect(),
    );

    let forward_once = || -> Result<f64> {
        let mut g = Graph::<f32>::new().with_inference().with_threads(threads);
        let xv = g.constant(x.clone());
        let t0 = Instant::now();
        let y = model.forward(&mut g, xv)?;
        let _ = g.value(y);
        Ok(t0.elapsed().as_secs_f64() * 1e3)
    };
    let step_once = || -> Result<f64> {
        let mut g = Graph::<f32>::new().with_train(true).with_threads(threads);
        let xv = g.constant(x.clone());
        let t0 = Instant::now();
        let logits = model.forward(&mut g, xv)?;
        let loss = combined_loss(
            &mut g,
            logits,
            labels.clone(),
            IGNORE_LABEL as u32,
            config.num_classes,
            1.0,
            1.0,
        )?;
        let _ = g.backward(loss)?;
        Ok(t0.elapsed().as_secs_f64() * 1e3)
    };

    for _ in 0..warmup {
        forward_once()?;
    }
    let mut fwd = Vec::with_capacity(reps);
    for _ in 0..reps {
        fwd.push(forward_once()?);
    }
    for _ in 0..warmup {
        step_once()?;
    }
    let mut step = Vec::with_capacity(reps);
    for _ in 0..reps {
        step.push(step_once()?);
    }

    Ok(TimingRecord {
        report: BenchReport {
            architecture: arch.name().to_string(),
            preset: String::new(),
            param_count: model.param_count(),
            forward_ms: Stats::from_durations(fwd),
            train_step_ms: Stats::from_durations(step),
            reps,
            warmup,
            threads,
            dtype: "f32".to_string(),
            dice_cases: Vec::new(),
        },
    })
}
