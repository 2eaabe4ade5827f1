//! Replicate-level execution and per-replicate random streams.
//!
//! Every replicate draws from its own generator, seeded from
//! `(master_seed, replicate)` alone, and results are collected in replicate
//! order. The output is therefore the same for any worker count and for the
//! sequential fallback used when the `parallel` feature is off.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing over replicates; sequential without the
    /// `parallel` feature.
    #[default]
    Parallel,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(master_seed: u64, replicate: u64) -> u64 {
    mix64(mix64(master_seed) ^ replicate.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream_rng(master_seed: u64, replicate: u64) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(master_seed, replicate))
}

/// Runs `job(replicate, rng)` for `replicate` in `0..count` and returns the
/// outputs in replicate order, or the error of the lowest failing replicate.
pub fn map_replicates<T, E, F>(
    count: usize,
    master_seed: u64,
    execution: Execution,
    job: F,
) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64, &mut StreamRng) -> Result<T, E> + Sync + Send,
{
    let run = |r: usize| {
        let r = r as u64;
        let mut rng = stream_rng(master_seed, r);
        job(r, &mut rng)
    };
    match execution {
        Execution::Sequential => (0..count).map(run).collect(),
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                let all: Vec<Result<T, E>> = (0..count).into_par_iter().map(run).collect();
                all.into_iter().collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..count).map(run).collect()
            }
        }
    }
}

/// Runs `f` with `threads` workers for [`Execution::Parallel`] jobs
/// (`None` keeps the default pool). Outputs do not depend on the count.
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            return pool.install(f);
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    f()
}
