//! Seeded, parallel Monte Carlo with results independent of thread count.
//!
//! Samples are grouped in fixed-size batches; batch `b` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `b`, and per-batch sums are
//! combined in batch order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub const BATCH: u64 = 4096;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

/// Generator for batch `batch` of a run seeded with `seed`.
pub fn batch_rng(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

fn batches(samples: u64) -> impl IndexedParallelIterator<Item = (u64, u64)> {
    let n = samples.div_ceil(BATCH) as usize;
    (0..n).into_par_iter().map(move |b| {
        let b = b as u64;
        let len = BATCH.min(samples - b * BATCH);
        (b, len)
    })
}

/// Mean of `f` over `samples` draws. `f` receives the batch generator and the
/// global sample index.
pub fn mean<F>(samples: u64, seed: u64, f: F) -> Estimate
where
    F: Fn(&mut ChaCha8Rng, u64) -> f64 + Sync,
{
    let sums: Vec<(f64, f64)> = batches(samples)
        .map(|(b, len)| {
            let mut rng = batch_rng(seed, b);
            let (mut s, mut s2) = (0.0, 0.0);
            for i in 0..len {
                let v = f(&mut rng, b * BATCH + i);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    finish(samples, seed, &sums)
}

/// Fraction of draws for which `f` holds; counts are integers so the result
/// is bit-identical for any batching across threads.
pub fn fraction<F>(samples: u64, seed: u64, f: F) -> Estimate
where
    F: Fn(&mut ChaCha8Rng, u64) -> bool + Sync,
{
    let hits: u64 = batches(samples)
        .map(|(b, len)| {
            let mut rng = batch_rng(seed, b);
            (0..len).filter(|&i| f(&mut rng, b * BATCH + i)).count() as u64
        })
        .sum();
    let n = samples.max(1) as f64;
    let p = hits as f64 / n;
    Estimate { value: p, stderr: (p * (1.0 - p) / n).sqrt(), samples, seed }
}

fn finish(samples: u64, seed: u64, sums: &[(f64, f64)]) -> Estimate {
    let n = samples.max(1) as f64;
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let m = s / n;
    let var = ((s2 / n - m * m) * n / (n - 1.0).max(1.0)).max(0.0);
    Estimate { value: m, stderr: (var / n).sqrt(), samples, seed }
}
