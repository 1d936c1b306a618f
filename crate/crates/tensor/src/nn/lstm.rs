use rand::Rng;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Var};

/// LSTM cell with gate blocks ordered (input, forget, cell candidate, output)
/// along the `4·d_h` axis.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_recurrent: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_h: usize,
}

/// Hidden and cell state, one row per sequence.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    /// U(−1/√d_h, 1/√d_h) weights; forget-gate bias 1.0, other biases 0.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_h: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (d_h as f64).sqrt();
        let w_input = store.add_uniform(format!("{name}.w_input"), &[d_in, 4 * d_h], bound, rng)?;
        let w_recurrent = store.add_uniform(format!("{name}.w_recurrent"), &[d_h, 4 * d_h], bound, rng)?;
        let bias = store.add_full(format!("{name}.bias"), &[4 * d_h], 0.0)?;
        for v in &mut store.get_mut(bias).data_mut()[d_h..2 * d_h] {
            *v = T::one();
        }
        Ok(Self {
            w_input,
            w_recurrent,
            bias,
            d_in,
            d_h,
        })
    }

    pub fn step<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, prev: LstmState) -> Result<LstmState> {
        let rows = tape.shape(x)[0];
        for (v, width) in [(x, self.d_in), (prev.h, self.d_h), (prev.c, self.d_h)] {
            if tape.shape(v) != [rows, width] {
                return Err(TensorError::ShapeMismatch {
                    op: "lstm_cell",
                    lhs: tape.shape(v).to_vec(),
                    rhs: vec![rows, width],
                });
            }
        }
        let (wi, wh, b) = (
            tape.param(self.w_input),
            tape.param(self.w_recurrent),
            tape.param(self.bias),
        );
        let xi = tape.matmul(x, wi)?;
        let hh = tape.matmul(prev.h, wh)?;
        let pre = tape.add(xi, hh)?;
        let gates = tape.add(pre, b)?;
        let d = self.d_h;
        let i = tape.slice_cols(gates, 0, d)?;
        let f = tape.slice_cols(gates, d, d)?;
        let g = tape.slice_cols(gates, 2 * d, d)?;
        let o = tape.slice_cols(gates, 3 * d, d)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, prev.c)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}
