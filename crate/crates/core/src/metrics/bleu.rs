use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{contract, Result};

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-1..=`max_n` with clipped counts pooled over all pairs and a
/// single brevity penalty.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<Vec<f64>> {
    if candidates.len() != references.len() {
        return Err(contract(format!(
            "bleu: {} candidates vs {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(contract("bleu: max_n must be at least 1"));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=max_n {
            let rc = ngram_counts(reference, n);
            for (g, c) in ngram_counts(cand, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 {
        return Ok(vec![0.0; max_n]);
    }
    let bp = if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    let mut log_sum = 0.0;
    let mut scores = Vec::with_capacity(max_n);
    for n in 0..max_n {
        if matched[n] == 0 || log_sum == f64::NEG_INFINITY {
            log_sum = f64::NEG_INFINITY;
            scores.push(0.0);
            continue;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
        scores.push(bp * (log_sum / (n + 1) as f64).exp());
    }
    Ok(scores)
}
