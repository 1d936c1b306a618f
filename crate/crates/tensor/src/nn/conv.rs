use rand::Rng;

use crate::error::Result;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{ConvGeom, Tape, Var};

/// Square-kernel convolution on channels-last activations
/// (`batch·height·width × channels`), lowered to im2col + matmul.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = kernel * kernel * c_in;
        let weight = store.add_uniform(
            format!("{name}.weight"),
            &[fan_in, c_out],
            (6.0 / fan_in as f64).sqrt(),
            rng,
        )?;
        let bias = store.add_uniform(format!("{name}.bias"), &[c_out], 1.0 / (fan_in as f64).sqrt(), rng)?;
        Ok(Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad,
        })
    }

    /// Returns the output activations and their spatial size.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        batch: usize,
        height: usize,
        width: usize,
    ) -> Result<(Var, usize, usize)> {
        let geom = ConvGeom {
            batch,
            height,
            width,
            channels: self.c_in,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        };
        let cols = tape.im2col(x, geom)?;
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matmul(cols, w)?;
        let y = tape.add(y, b)?;
        Ok((y, geom.out_height(), geom.out_width()))
    }
}
