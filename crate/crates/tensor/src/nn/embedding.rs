use rand::Rng;

use crate::error::{contract, Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fixed sinusoidal positions: even columns `sin(p / 10000^(2i/d))`, odd
/// columns the matching cosine.
pub fn sinusoidal_table(max_len: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; max_len * dim];
    for pos in 0..max_len {
        for j in 0..dim {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            out[pos * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Learned token table plus fixed sinusoidal position rows.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
    positional: Vec<f64>,
    max_len: usize,
}

impl EmbeddingTable {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab: usize,
        dim: usize,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add_uniform(format!("{name}.table"), &[vocab, dim], 3f64.sqrt(), rng)?;
        Ok(Self {
            table,
            vocab,
            dim,
            positional: sinusoidal_table(max_len, dim),
            max_len,
        })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn positional_row(&self, pos: usize) -> &[f64] {
        &self.positional[pos * self.dim..(pos + 1) * self.dim]
    }

    /// Rows `table[ids[i]]`, plus position `i` when `add_position`.
    pub fn embed<T: Real>(&self, tape: &mut Tape<'_, T>, ids: &[usize], add_position: bool) -> Result<Var> {
        if add_position {
            let positions: Vec<usize> = (0..ids.len()).collect();
            self.embed_at(tape, ids, Some(&positions))
        } else {
            self.embed_at(tape, ids, None)
        }
    }

    /// Rows `table[ids[i]]` plus, when given, position row `positions[i]`.
    /// Lets several sequences share one call with restarting positions.
    pub fn embed_at<T: Real>(&self, tape: &mut Tape<'_, T>, ids: &[usize], positions: Option<&[usize]>) -> Result<Var> {
        if ids.is_empty() {
            return Err(contract("embed", "no token ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(TensorError::IndexOutOfRange {
                op: "embed",
                index: bad,
                extent: self.vocab,
            });
        }
        let table = tape.param(self.table);
        let rows = tape.gather_rows(table, ids)?;
        let Some(positions) = positions else {
            return Ok(rows);
        };
        if positions.len() != ids.len() {
            return Err(contract("embed", "positions and ids differ in length"));
        }
        let mut pe = Vec::with_capacity(ids.len() * self.dim);
        for &p in positions {
            if p >= self.max_len {
                return Err(TensorError::IndexOutOfRange {
                    op: "embed",
                    index: p,
                    extent: self.max_len,
                });
            }
            pe.extend(self.positional_row(p).iter().map(|&v| T::of(v)));
        }
        let pe = tape.constant(Tensor::new(vec![ids.len(), self.dim], pe)?);
        tape.add(rows, pe)
    }
}
