use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{contract, Result};

/// Search nodes spent looking for a fewer-chunk alignment before settling
/// for the best one found.
pub const NODE_BUDGET: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
    /// False when the search budget ran out before optimality was proven.
    pub exact: bool,
}

struct Search {
    cand: Vec<usize>,
    ref_at: Vec<usize>,
    positions: Vec<Vec<usize>>,
    used: Vec<bool>,
    needed: Vec<usize>,
    remaining: Vec<usize>,
    best: usize,
    nodes: usize,
    exhausted: bool,
}

impl Search {
    fn dfs(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if self.nodes > NODE_BUDGET {
            self.exhausted = true;
            return;
        }
        if chunks >= self.best {
            return;
        }
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let t = self.cand[i];
        self.remaining[t] -= 1;
        if self.needed[t] > 0 {
            let cont = prev
                .map(|p| p + 1)
                .filter(|&j| j < self.ref_at.len() && self.ref_at[j] == t && !self.used[j]);
            let others: Vec<usize> = self.positions[t]
                .iter()
                .copied()
                .filter(|&j| !self.used[j] && Some(j) != cont)
                .collect();
            for j in cont.into_iter().chain(others) {
                self.used[j] = true;
                self.needed[t] -= 1;
                let extra = usize::from(cont != Some(j));
                self.dfs(i + 1, Some(j), chunks + extra);
                self.needed[t] += 1;
                self.used[j] = false;
                if self.exhausted {
                    self.remaining[t] += 1;
                    return;
                }
            }
        }
        if self.needed[t] <= self.remaining[t] {
            self.dfs(i + 1, None, chunks);
        }
        self.remaining[t] += 1;
    }
}

/// Maximum exact unigram matching with the fewest chunks, preferring
/// leftmost reference positions.
pub fn align<T: Eq + Hash>(cand: &[T], reference: &[T]) -> Alignment {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let mut id_of = |t| {
        let next = ids.len();
        *ids.entry(t).or_insert(next)
    };
    let cand: Vec<usize> = cand.iter().map(&mut id_of).collect();
    let ref_at: Vec<usize> = reference.iter().map(&mut id_of).collect();
    let types = ids.len();
    let mut positions = vec![Vec::new(); types];
    for (j, &t) in ref_at.iter().enumerate() {
        positions[t].push(j);
    }
    let mut remaining = vec![0; types];
    for &t in &cand {
        remaining[t] += 1;
    }
    let needed: Vec<usize> = (0..types).map(|t| remaining[t].min(positions[t].len())).collect();
    let matches = needed.iter().sum();
    if matches == 0 {
        return Alignment {
            matches: 0,
            chunks: 0,
            exact: true,
        };
    }
    let mut s = Search {
        used: vec![false; ref_at.len()],
        cand,
        ref_at,
        positions,
        needed,
        remaining,
        best: usize::MAX,
        nodes: 0,
        exhausted: false,
    };
    s.dfs(0, None, 0);
    Alignment {
        matches,
        chunks: s.best,
        exact: !s.exhausted,
    }
}

pub fn meteor_pair<T: Eq + Hash>(cand: &[T], reference: &[T]) -> f64 {
    let a = align(cand, reference);
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    fmean * (1.0 - penalty)
}

/// Exact-match METEOR variant, averaged over pairs.
pub fn meteor_lite<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(contract(format!(
            "meteor_lite: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = candidates.iter().zip(references).map(|(c, r)| meteor_pair(c, r)).sum();
    Ok(total / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn examples() {
        let s = meteor_lite(&[w("a b c")], &[w("a b c")]).unwrap();
        assert!((s - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        assert!((s - 0.9815).abs() < 5e-5);
        assert_eq!(meteor_lite(&[w("a b")], &[w("c d")]).unwrap(), 0.0);
        assert!((meteor_lite(&[w("b a")], &[w("a b")]).unwrap() - 0.5).abs() < 1e-12);
        assert!(meteor_lite(&[w("a")], &[]).is_err());
    }

    #[test]
    fn prefers_fewer_chunks_over_leftmost() {
        // leftmost greedy would align the first "a" to ref 0 and split
        let a = align(&w("a b"), &w("a x a b"));
        assert_eq!((a.matches, a.chunks, a.exact), (2, 1, true));
    }

    #[test]
    fn long_repetitive_inputs_stay_bounded() {
        let cand: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let reference: Vec<usize> = (0..60).map(|i| (i * 7) % 3).collect();
        let a = align(&cand, &reference);
        assert_eq!(a.matches, 60);
        assert!(a.chunks >= 1 && a.chunks <= 60);
    }
}
