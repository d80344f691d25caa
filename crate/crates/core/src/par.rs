//! Index-ordered data-parallel maps.
//!
//! With the `parallel` feature the maps run on the current rayon pool; without
//! it (or inside [`sequential`]) they are plain loops. Output order never
//! depends on scheduling, and reductions go through [`pairwise_sum`], so the
//! numbers are identical whichever path runs.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQ: Cell<bool> = const { Cell::new(false) };
}

#[cfg(feature = "parallel")]
fn forced_sequential() -> bool {
    FORCE_SEQ.with(|f| f.get())
}

/// Run `f` with every map in this thread executed sequentially.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQ.with(|c| c.replace(true));
    let out = f();
    FORCE_SEQ.with(|c| c.set(prev));
    out
}

/// Evaluate `f(0..n)` and collect in index order.
pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !forced_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Like [`map`] over a slice.
pub fn map_slice<A, T, F>(xs: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    map(xs.len(), |i| f(&xs[i]))
}

/// Run `f` on a dedicated pool capped at `threads` workers. `None` uses the
/// global pool. Without the `parallel` feature this just calls `f`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            if n == 1 {
                return sequential(f);
            }
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Number of workers maps will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        if !forced_sequential() {
            return rayon::current_num_threads();
        }
    }
    1
}

/// Fixed-shape pairwise summation. The split points depend only on the
/// length, never on thread count.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_keeps_order() {
        let v = map(1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
        let w = sequential(|| map(1000, |i| i * 2));
        assert_eq!(v, w);
    }

    #[test]
    fn pairwise_matches_exact_small_ints() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        let (m, s) = mean_stderr(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 0.0);
    }
}
