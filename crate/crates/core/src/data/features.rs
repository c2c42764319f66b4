use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{AlignedFrame, DataError, Result};
use crate::Tensor;

pub const N_FEATURES: usize = 6;
/// Columns holding the sentiment and risk channels.
pub const LLM_COLUMNS: [usize; 2] = [4, 5];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `[log return, (high-low)/close, (close-open)/close, z(log1p volume), sentiment, risk]`
    #[default]
    Returns,
    /// `[close, high, low]` divided by the episode's first close, then the
    /// same volume and score channels.
    RawScaled,
}

/// Per-minute feature rows. Price columns of [`FeatureMode::RawScaled`]
/// are stored unscaled and divided by the episode anchor on read.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    mode: FeatureMode,
    rows: usize,
    data: Vec<f64>,
    pub volume_mean: f64,
    pub volume_std: f64,
}

const STD_GUARD: f64 = 1e-12;

pub fn build_features(frames: &[AlignedFrame], mode: FeatureMode, train_range: Range<usize>) -> Result<FeatureMatrix> {
    if train_range.is_empty() || train_range.end > frames.len() {
        return Err(DataError::Invalid(format!(
            "training range {train_range:?} invalid for {} frames",
            frames.len()
        )));
    }
    if let Some(i) = frames
        .iter()
        .position(|f| [f.bar.open, f.bar.high, f.bar.low, f.bar.close].iter().any(|p| *p <= 0.0))
    {
        return Err(DataError::NonPositivePrice(i));
    }
    let logvol: Vec<f64> = frames.iter().map(|f| f.bar.volume.ln_1p()).collect();
    let train = &logvol[train_range];
    let n = train.len() as f64;
    let mean = train.iter().sum::<f64>() / n;
    let std = (train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();

    let mut data = Vec::with_capacity(frames.len() * N_FEATURES);
    for (i, f) in frames.iter().enumerate() {
        let b = &f.bar;
        let zvol = if std < STD_GUARD { 0.0 } else { (logvol[i] - mean) / std };
        let sentiment = (f64::from(f.sentiment) - 3.0) / 2.0;
        let risk = (f64::from(f.risk) - 1.0) / 4.0;
        match mode {
            FeatureMode::Returns => {
                let ret = if i == 0 { 0.0 } else { (b.close / frames[i - 1].bar.close).ln() };
                data.extend_from_slice(&[
                    ret,
                    (b.high - b.low) / b.close,
                    (b.close - b.open) / b.close,
                    zvol,
                    sentiment,
                    risk,
                ]);
            }
            FeatureMode::RawScaled => data.extend_from_slice(&[b.close, b.high, b.low, zvol, sentiment, risk]),
        }
    }
    Ok(FeatureMatrix {
        mode,
        rows: frames.len(),
        data,
        volume_mean: mean,
        volume_std: std,
    })
}

impl FeatureMatrix {
    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature row `i`; `anchor` is the episode's first close and only
    /// matters in raw-scaled mode.
    pub fn row(&self, i: usize, anchor: f64) -> [f64; N_FEATURES] {
        let mut r = [0.0; N_FEATURES];
        r.copy_from_slice(&self.data[i * N_FEATURES..(i + 1) * N_FEATURES]);
        if self.mode == FeatureMode::RawScaled {
            for v in &mut r[..3] {
                *v /= anchor;
            }
        }
        r
    }

    /// `lookback x N_FEATURES` rows ending at `end` (inclusive); rows before
    /// `floor` repeat the row at `floor`.
    pub fn window(&self, end: usize, lookback: usize, floor: usize, anchor: f64) -> Tensor {
        let mut data = Vec::with_capacity(lookback * N_FEATURES);
        for k in 0..lookback {
            let idx = (end + k + 1).saturating_sub(lookback).max(floor);
            data.extend_from_slice(&self.row(idx, anchor));
        }
        Tensor::new(vec![lookback, N_FEATURES], data).expect("window shape")
    }

    pub fn without_llm(&self) -> Self {
        let mut out = self.clone();
        for r in 0..out.rows {
            for c in LLM_COLUMNS {
                out.data[r * N_FEATURES + c] = 0.0;
            }
        }
        out
    }
}
