use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetSplit, EpisodeWindow, Result, SplitTag};

pub const DEFAULT_BOUNDARIES: (f64, f64) = (0.70, 0.85);

fn cut(n: usize, frac: f64) -> usize {
    // 1e-9 keeps exact products such as 0.7 * 100 from landing at 69.999..
    (((n as f64) * frac) + 1e-9).floor() as usize
}

/// `[0, a*N)`, `[a*N, b*N)`, `[b*N, N)` with floors.
pub fn chronological_split(n: usize, boundaries: (f64, f64)) -> Result<DatasetSplit> {
    let (a, b) = boundaries;
    if !(0.0 < a && a < b && b < 1.0) {
        return Err(DataError::Invalid(format!("split boundaries must satisfy 0 < a < b < 1, got {boundaries:?}")));
    }
    let (i, j) = (cut(n, a).min(n), cut(n, b).min(n));
    let split = DatasetSplit {
        train: 0..i,
        validation: i..j,
        test: j..n,
    };
    for (name, r) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        if r.is_empty() {
            return Err(DataError::EmptySplit(name));
        }
    }
    Ok(split)
}

/// Uniform episode starts such that `[start - lookback, start + length)`
/// stays inside `range`.
pub fn sample_windows(
    range: Range<usize>,
    split: SplitTag,
    length: usize,
    lookback: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<EpisodeWindow>> {
    let have = range.len();
    if length < 2 || have < length + lookback {
        return Err(DataError::TooShort {
            need: length.max(2) + lookback,
            have,
        });
    }
    let lo = range.start + lookback;
    let hi = range.end - length;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| EpisodeWindow {
            start: rng.random_range(lo..=hi),
            length,
            split,
        })
        .collect())
}
