//! Sequential and data-parallel drivers for per-element work.
//!
//! With the `parallel` feature disabled, [`Exec::Parallel`] silently runs
//! sequentially. Both drivers produce bit-identical results: each element
//! is evaluated independently and argmax ties resolve to the lowest index.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Best element found so far plus the additions spent getting there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Best {
    pub index: usize,
    pub score: f64,
    pub additions: u64,
}

impl Best {
    const NONE: Best = Best { index: usize::MAX, score: f64::NEG_INFINITY, additions: 0 };

    fn merge(self, other: Best) -> Best {
        let additions = self.additions + other.additions;
        let pick_other = other.index != usize::MAX
            && (self.index == usize::MAX
                || other.score > self.score
                || (other.score == self.score && other.index < self.index));
        let winner = if pick_other { other } else { self };
        Best { additions, ..winner }
    }
}

/// Evaluates `score(i)` for `i in 0..n`, returning the argmax (lowest index
/// on ties) and the total additions reported by the evaluations.
pub(crate) fn argmax<F>(n: usize, exec: Exec, score: F) -> Best
where
    F: Fn(usize) -> (f64, u64) + Sync,
{
    let one = |i: usize| {
        let (score, additions) = score(i);
        Best { index: i, score, additions }
    };
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(one).reduce(|| Best::NONE, Best::merge)
        }
        _ => (0..n).map(one).fold(Best::NONE, Best::merge),
    }
}

/// `(0..n).map(f).collect()`, optionally in parallel, preserving order.
pub(crate) fn map<T, F>(n: usize, exec: Exec, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_resolve_to_lowest_index() {
        let scores = [1.0, 3.0, 2.0, 3.0, 3.0];
        for exec in [Exec::Sequential, Exec::Parallel] {
            let best = argmax(scores.len(), exec, |i| (scores[i], 2));
            assert_eq!(best.index, 1);
            assert_eq!(best.score, 3.0);
            assert_eq!(best.additions, 10);
        }
    }

    #[test]
    fn large_reduction_matches_sequential() {
        let f = |i: usize| (((i * 7919) % 1013) as f64, 1);
        let a = argmax(100_000, Exec::Sequential, f);
        let b = argmax(100_000, Exec::Parallel, f);
        assert_eq!(a, b);
    }

    #[test]
    fn map_preserves_order() {
        assert_eq!(map(5, Exec::Parallel, |i| i * i), vec![0, 1, 4, 9, 16]);
    }
}
