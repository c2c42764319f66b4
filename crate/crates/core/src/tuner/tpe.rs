use rand::Rng;
use rand_distr::StandardNormal;

use super::space::{DimKind, Params, SearchSpace};
use super::TrialRecord;

pub const N_STARTUP: usize = 10;
/// Fraction of scored trials treated as "good".
pub const GOOD_FRACTION: f64 = 0.25;
pub const N_CANDIDATES: usize = 24;

/// One-dimensional density over a dimension's internal coordinate.
#[derive(Clone, Debug)]
pub enum Parzen {
    /// Uniform prior plus Gaussian kernels at the observations.
    Continuous { lo: f64, hi: f64, centers: Vec<f64>, sigma: f64 },
    /// Laplace-smoothed choice frequencies.
    Categorical { choices: Vec<f64>, probs: Vec<f64> },
}

impl Parzen {
    pub fn fit(kind: &DimKind, values: &[f64]) -> Self {
        match kind {
            DimKind::Categorical { choices } => {
                let n = values.len() as f64;
                let k = choices.len() as f64;
                let probs = choices
                    .iter()
                    .map(|c| (values.iter().filter(|&&v| v == *c).count() as f64 + 1.0) / (n + k))
                    .collect();
                Parzen::Categorical {
                    choices: choices.clone(),
                    probs,
                }
            }
            _ => {
                let (lo, hi) = kind.internal_bounds().expect("continuous");
                let centers: Vec<f64> = values.iter().map(|&v| kind.to_internal(v)).collect();
                let sigma = 0.5 * (hi - lo) / (1.0 + centers.len() as f64).powf(0.2);
                Parzen::Continuous { lo, hi, centers, sigma }
            }
        }
    }

    /// Density at an internal coordinate (or a choice value).
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Parzen::Categorical { choices, probs } => {
                choices.iter().position(|&c| c == x).map_or(0.0, |i| probs[i])
            }
            Parzen::Continuous { lo, hi, centers, sigma } => {
                let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                let kernels: f64 = centers.iter().map(|c| norm * (-0.5 * ((x - c) / sigma).powi(2)).exp()).sum();
                (1.0 / (hi - lo) + kernels) / (centers.len() as f64 + 1.0)
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Parzen::Categorical { choices, probs } => choices[crate::agents::sample_categorical(probs, rng)],
            Parzen::Continuous { lo, hi, centers, sigma } => {
                let k = rng.random_range(0..=centers.len());
                if k == centers.len() {
                    return rng.random_range(*lo..=*hi);
                }
                for _ in 0..16 {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = centers[k] + sigma * z;
                    if (*lo..=*hi).contains(&x) {
                        return x;
                    }
                }
                centers[k].clamp(*lo, *hi)
            }
        }
    }
}

/// Scored trials ordered best first (ties by lower id).
pub fn scored(history: &[TrialRecord]) -> Vec<&TrialRecord> {
    let mut v: Vec<&TrialRecord> = history.iter().filter(|t| t.best_score.is_some()).collect();
    v.sort_by(|a, b| {
        b.best_score
            .unwrap()
            .total_cmp(&a.best_score.unwrap())
            .then(a.trial_id.cmp(&b.trial_id))
    });
    v
}

/// Good/bad densities for one dimension.
pub fn split_densities(kind: &DimKind, name: &str, ranked: &[&TrialRecord]) -> (Parzen, Parzen) {
    let n_good = ((GOOD_FRACTION * ranked.len() as f64).ceil() as usize).max(1);
    let vals = |ts: &[&TrialRecord]| ts.iter().filter_map(|t| t.params.get(name).copied()).collect::<Vec<_>>();
    let (good, bad) = ranked.split_at(n_good.min(ranked.len()));
    (Parzen::fit(kind, &vals(good)), Parzen::fit(kind, &vals(bad)))
}

/// Next parameters: uniform for the first [`N_STARTUP`] scored trials,
/// then per-dimension TPE that keeps the best of [`N_CANDIDATES`] draws
/// from the good density by `l(x) / g(x)`.
pub fn suggest(space: &SearchSpace, history: &[TrialRecord], rng: &mut impl Rng) -> Params {
    let ranked = scored(history);
    if ranked.len() < N_STARTUP {
        return space.sample_uniform(rng);
    }
    space
        .dims
        .iter()
        .map(|d| {
            let (l, g) = split_densities(&d.kind, &d.name, &ranked);
            let mut best = (f64::NEG_INFINITY, 0.0);
            for _ in 0..N_CANDIDATES {
                let x = l.sample(rng);
                let score = l.pdf(x).ln() - g.pdf(x).ln();
                if score > best.0 {
                    best = (score, x);
                }
            }
            (d.name.clone(), d.kind.from_internal(best.1))
        })
        .collect()
}
