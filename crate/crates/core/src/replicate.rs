//! Replica fan-out over a bounded worker pool.
//!
//! Each replica derives its randomness from `(master seed, label, index)`
//! only, and results come back in index order, so output is identical for
//! any worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub fn run_replicas<T, F>(n_replicas: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if workers == 0 {
        return Err(Error::Usage("workers must be at least 1".into()));
    }
    if workers == 1 {
        return Ok((0..n_replicas).map(&f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..n_replicas).into_par_iter().map(&f).collect()))
}

/// Like [`run_replicas`] for fallible replica bodies; the first error wins.
pub fn try_run_replicas<T, F>(n_replicas: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    run_replicas(n_replicas, workers, f)?.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn independent_of_worker_count() {
        let body = |i: u64| substream(42, "rep", i).random::<u64>();
        let one = run_replicas(200, 1, body).unwrap();
        let four = run_replicas(200, 4, body).unwrap();
        assert_eq!(one, four);
        assert!(run_replicas(3, 0, body).is_err());
    }
}
