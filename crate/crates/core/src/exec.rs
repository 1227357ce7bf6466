//! Execution policy for the data-parallel inner loops.
//!
//! Every parallel loop in the crate goes through these helpers so that the
//! sequential and rayon paths produce bitwise-identical results. Reductions
//! over particles use [`ExactSum`], an integer fixed-point accumulator, which
//! makes sums independent of both thread count and summation order.

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise falls back
    /// to the sequential path.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()` under the given policy. Output order is index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub fn try_map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Visits `data` in chunks of `chunk` elements, each paired with its own
/// per-item state (for example an RNG stream). Stops at the first error in
/// index order.
pub fn try_for_each_chunk_with<T, S, F>(
    exec: Execution,
    data: &mut [T],
    chunk: usize,
    states: &mut [S],
    f: F,
) -> Result<()>
where
    T: Send,
    S: Send,
    F: Fn(usize, &mut [T], &mut S) -> Result<()> + Sync + Send,
{
    debug_assert_eq!(data.len(), chunk * states.len());
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return data
            .par_chunks_mut(chunk)
            .zip(states.par_iter_mut())
            .enumerate()
            .try_for_each(|(i, (c, s))| f(i, c, s));
    }
    let _ = exec;
    data.chunks_mut(chunk)
        .zip(states.iter_mut())
        .enumerate()
        .try_for_each(|(i, (c, s))| f(i, c, s))
}

/// Sum of `f(i)` over `0..n`, exact up to the fixed-point resolution and
/// therefore order independent.
pub fn exact_sum<F>(exec: Execution, n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    const BLOCK: usize = 4096;
    let blocks = n.div_ceil(BLOCK);
    let partial = map_indexed(exec, blocks, |b| {
        let mut acc = ExactSum::default();
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            acc.add(f(i));
        }
        acc
    });
    partial
        .into_iter()
        .fold(ExactSum::default(), |mut a, b| {
            a.merge(&b);
            a
        })
        .value()
}

/// Fixed-point accumulator with 2^-60 resolution.
///
/// Exact (hence associative) for finite terms with magnitude below 2^40 and up
/// to 2^26 terms. Terms outside that range switch the accumulator to plain
/// floating-point summation.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    fixed: i128,
    fallback: f64,
    overflow: bool,
}

const FIXED_SCALE: f64 = (1u128 << 60) as f64;
const FIXED_LIMIT: f64 = (1u64 << 40) as f64;

impl ExactSum {
    pub fn add(&mut self, v: f64) {
        self.fallback += v;
        if self.overflow {
            return;
        }
        if !v.is_finite() || v.abs() >= FIXED_LIMIT {
            self.overflow = true;
            return;
        }
        match self.fixed.checked_add((v * FIXED_SCALE).round() as i128) {
            Some(s) => self.fixed = s,
            None => self.overflow = true,
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        self.fallback += other.fallback;
        if self.overflow || other.overflow {
            self.overflow = true;
            return;
        }
        match self.fixed.checked_add(other.fixed) {
            Some(s) => self.fixed = s,
            None => self.overflow = true,
        }
    }

    pub fn value(&self) -> f64 {
        if self.overflow {
            self.fallback
        } else {
            self.fixed as f64 / FIXED_SCALE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_is_order_independent() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i as f64) * 0.7311).sin() * 1e3).collect();
        let mut rev = xs.clone();
        rev.reverse();
        let a = exact_sum(Execution::Sequential, xs.len(), |i| xs[i]);
        let b = exact_sum(Execution::Parallel, rev.len(), |i| rev[i]);
        assert_eq!(a.to_bits(), b.to_bits());
        let naive: f64 = xs.iter().sum();
        assert!((a - naive).abs() < 1e-9);
    }

    #[test]
    fn overflow_falls_back_to_float() {
        let mut s = ExactSum::default();
        s.add(1.0);
        s.add(1e20);
        assert_eq!(s.value(), 1e20 + 1.0);
    }

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(Execution::Parallel, 1000, |i| i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
