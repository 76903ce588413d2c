//! Deterministic Monte-Carlo integration.
//!
//! A sample budget is split by recursive halving into leaves of at most
//! [`LEAF_SAMPLES`] samples. Each leaf draws from its own ChaCha stream keyed
//! by `(seed, first sample index)`, and leaf statistics are merged pairwise
//! along the same recursion tree. The leaf layout depends only on the sample
//! count, so results are bit-identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Maximum number of samples evaluated sequentially in one leaf.
pub const LEAF_SAMPLES: u64 = 4096;

/// Random stream for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Count, mean and sum of squared deviations, merged with Chan's update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let wa = self.count as f64;
        let wb = other.count as f64;
        let mean = self.mean + delta * (wb / count as f64);
        let m2 = self.m2 + other.m2 + delta * delta * (wa * wb / count as f64);
        Self { count, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count as f64 - 1.0)
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

#[cfg(feature = "parallel")]
fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    (a(), b())
}

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
/// Output order is always `0..n`.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Averages `sample(rng, scratch)` over `samples` draws.
///
/// `init` builds per-leaf scratch space (configuration buffers and the like).
pub fn integrate<S, I, F>(samples: u64, seed: u64, init: I, sample: F) -> RunningStats
where
    I: Fn() -> S + Sync,
    F: Fn(&mut ChaCha8Rng, &mut S) -> f64 + Sync,
{
    integrate_many(samples, seed, 1, init, |rng, scratch, out| out[0] = sample(rng, scratch))
        .pop()
        .expect("one output")
}

/// Like [`integrate`] for `outputs` integrands sharing every draw.
pub fn integrate_many<S, I, F>(samples: u64, seed: u64, outputs: usize, init: I, sample: F) -> Vec<RunningStats>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut ChaCha8Rng, &mut S, &mut [f64]) + Sync,
{
    fn recurse<S, I, F>(lo: u64, hi: u64, seed: u64, outputs: usize, init: &I, sample: &F) -> Vec<RunningStats>
    where
        I: Fn() -> S + Sync,
        F: Fn(&mut ChaCha8Rng, &mut S, &mut [f64]) + Sync,
    {
        if hi - lo <= LEAF_SAMPLES {
            let mut rng = stream_rng(seed, lo);
            let mut scratch = init();
            let mut stats = vec![RunningStats::default(); outputs];
            let mut out = vec![0.0; outputs];
            for _ in lo..hi {
                sample(&mut rng, &mut scratch, &mut out);
                for (s, &v) in stats.iter_mut().zip(&out) {
                    s.push(v);
                }
            }
            return stats;
        }
        let mid = lo + (hi - lo) / 2;
        let (a, b) = join(
            || recurse(lo, mid, seed, outputs, init, sample),
            || recurse(mid, hi, seed, outputs, init, sample),
        );
        a.into_iter().zip(b).map(|(a, b)| a.merge(b)).collect()
    }
    if samples == 0 {
        return vec![RunningStats::default(); outputs];
    }
    recurse(0, samples, seed, outputs, &init, &sample)
}
