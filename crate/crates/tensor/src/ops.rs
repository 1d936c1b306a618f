//! Forward definitions of the differentiable primitives.

use crate::error::{contract, Result, TensorError};
use crate::real::{gemm_acc, Real, Trans};
use crate::tape::{Bcast, ConvGeom, Op, Tape, Var};
use crate::tensor::Tensor;

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Bcast, Vec<usize>)> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b {
        return Ok((Bcast::Same, a.to_vec()));
    }
    if nb == 1 {
        return Ok((Bcast::ScalarRhs, a.to_vec()));
    }
    if na == 1 {
        return Ok((Bcast::ScalarLhs, b.to_vec()));
    }
    let is_row_of = |row: &[usize], full: &[usize]| full.len() == 2 && (row == [full[1]] || row == [1, full[1]]);
    if is_row_of(b, a) {
        return Ok((Bcast::RowRhs, a.to_vec()));
    }
    if is_row_of(a, b) {
        return Ok((Bcast::RowLhs, b.to_vec()));
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

/// Operand indices feeding output element `i`; `cols` is the output's last extent.
#[inline]
pub(crate) fn operand_index(bc: Bcast, i: usize, cols: usize) -> (usize, usize) {
    match bc {
        Bcast::Same => (i, i),
        Bcast::ScalarRhs => (i, 0),
        Bcast::ScalarLhs => (0, i),
        Bcast::RowRhs => (i, i % cols),
        Bcast::RowLhs => (i % cols, i),
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl<T: Real> Tape<'_, T> {
    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let (bc, shape) = broadcast(name, self.shape(a), self.shape(b))?;
        let cols = *shape.last().expect("non-empty shape");
        let numel: usize = shape.iter().product();
        let (da, db) = (self.data(a), self.data(b));
        let data = (0..numel)
            .map(|i| {
                let (ia, ib) = operand_index(bc, i, cols);
                match kind {
                    Binary::Add => da[ia] + db[ib],
                    Binary::Sub => da[ia] - db[ib],
                    Binary::Mul => da[ia] * db[ib],
                }
            })
            .collect();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let op = match kind {
            Binary::Add => Op::Add(a, b, bc),
            Binary::Sub => Op::Sub(a, b, bc),
            Binary::Mul => Op::Mul(a, b, bc),
        };
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    /// Elementwise sum; also broadcasts a scalar or a bias row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(value.shape().to_vec(), data).expect("same shape");
        let rg = self.requires_grad(a);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x + c, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.data(a).iter().find(|&&x| !(x > T::zero())) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, |x| x.ln(), Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp(a, lo, hi))
    }

    /// Inverted dropout with a caller-drawn keep mask (`true` keeps).
    pub fn dropout(&mut self, a: Var, keep: &[bool], rate: f64) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return Err(contract(
                "dropout",
                format!("mask has {} entries for {} values", keep.len(), self.value(a).len()),
            ));
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(contract("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let s = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = keep.iter().map(|&k| if k { s } else { T::zero() }).collect();
        let value = self.value(a);
        let data = value.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(value.shape().to_vec(), data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.data(a), m, k, Trans::No, self.data(b), k, n, Trans::No, &mut out);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("transpose")?;
        let src = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(contract("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let mut out = self.data(a).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(out[at(j)]);
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (out[at(j)] - mx).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a, axis), rg))
    }

    /// `Σ_i w_i · (−log softmax(logits_i)[t_i])` over rows of a rank-2 logit matrix.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let (n, vocab) = self.value(logits).dims2("softmax_cross_entropy")?;
        if targets.len() != n || weights.len() != n {
            return Err(contract(
                "softmax_cross_entropy",
                format!("{n} rows but {} targets / {} weights", targets.len(), weights.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= vocab) {
            return Err(TensorError::IndexOutOfRange {
                op: "softmax_cross_entropy",
                index: t,
                extent: vocab,
            });
        }
        let x = self.data(logits);
        let mut probs = vec![T::zero(); n * vocab];
        let mut loss = T::zero();
        for r in 0..n {
            let row = &x[r * vocab..(r + 1) * vocab];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (p, &v) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (v - mx).exp();
                total += *p;
            }
            for p in &mut probs[r * vocab..(r + 1) * vocab] {
                *p /= total;
            }
            let log_z = mx + total.ln();
            loss += weights[r] * (log_z - row[targets[r]]);
        }
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().copied().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).len() as f64);
        let s = self.sum(a);
        self.scale(s, T::one() / n)
    }

    /// Sum of a rank-2 tensor along `axis`, keeping the reduced dimension.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("sum_axis")?;
        let x = self.data(a);
        let (shape, out) = match axis {
            0 => {
                let mut out = vec![T::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += x[i * c + j];
                    }
                }
                (vec![1, c], out)
            }
            1 => (
                vec![r, 1],
                (0..r).map(|i| x[i * c..(i + 1) * c].iter().copied().sum()).collect(),
            ),
            _ => return Err(contract("sum_axis", format!("axis {axis} on rank 2"))),
        };
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::SumAxis(a, axis), rg))
    }

    /// Concatenate rank-2 tensors along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(contract("concat", "no inputs"));
        }
        let dims = parts
            .iter()
            .map(|&p| self.value(p).dims2("concat"))
            .collect::<Result<Vec<_>>>()?;
        let (out_r, out_c) = match axis {
            0 => {
                let c = dims[0].1;
                if let Some(d) = dims.iter().find(|d| d.1 != c) {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: vec![dims[0].0, c],
                        rhs: vec![d.0, d.1],
                    });
                }
                (dims.iter().map(|d| d.0).sum(), c)
            }
            1 => {
                let r = dims[0].0;
                if let Some(d) = dims.iter().find(|d| d.0 != r) {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: vec![r, dims[0].1],
                        rhs: vec![d.0, d.1],
                    });
                }
                (r, dims.iter().map(|d| d.1).sum())
            }
            _ => return Err(contract("concat", format!("axis {axis} on rank 2"))),
        };
        let mut out = Vec::with_capacity(out_r * out_c);
        if axis == 0 {
            for &p in parts {
                out.extend_from_slice(self.data(p));
            }
        } else {
            for i in 0..out_r {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    out.extend_from_slice(&self.data(p)[i * c..(i + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(
            Tensor::new(vec![out_r, out_c], out)?,
            Op::Concat(parts.to_vec(), axis),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("slice_rows")?;
        if len == 0 || start + len > r {
            return Err(contract("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let out = self.data(a)[start * c..(start + len) * c].to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(vec![len, c], out)?, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(contract("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let x = self.data(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols(a, start), rg))
    }

    /// Rows of `a` selected by `index`; the gradient scatter-adds back.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.value(a).dims2("gather_rows")?;
        if index.is_empty() {
            return Err(contract("gather_rows", "empty index"));
        }
        if let Some(&i) = index.iter().find(|&&i| i >= r) {
            return Err(TensorError::IndexOutOfRange {
                op: "gather_rows",
                index: i,
                extent: r,
            });
        }
        let x = self.data(a);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&x[i * c..(i + 1) * c]);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(
            Tensor::new(vec![index.len(), c], out)?,
            Op::GatherRows(a, index.to_vec()),
            rg,
        ))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2("layer_norm")?;
        for p in [gamma, beta] {
            if self.value(p).len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![r, c],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let eps = T::of(eps);
        let n = T::of(c as f64);
        let (xs, gs, bs) = (self.data(x), self.data(gamma), self.data(beta));
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = vec![T::zero(); r];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gs[j] + bs[j];
            }
        }
        let rg = [x, gamma, beta].iter().any(|&v| self.requires_grad(v));
        Ok(self.push(
            Tensor::new(vec![r, c], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Unfold channels-last images (`batch·height·width × channels`) into
    /// convolution patches (`batch·out_h·out_w × kernel²·channels`), zero padded.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Result<Var> {
        let (r, c) = self.value(x).dims2("im2col")?;
        if r != geom.batch * geom.height * geom.width || c != geom.channels {
            return Err(contract(
                "im2col",
                format!("input {r}×{c} does not match geometry {geom:?}"),
            ));
        }
        if geom.kernel == 0 || geom.stride == 0 || geom.height + 2 * geom.pad < geom.kernel {
            return Err(contract("im2col", format!("degenerate geometry {geom:?}")));
        }
        let (oh, ow, pl) = (geom.out_height(), geom.out_width(), geom.patch_len());
        let src = self.data(x);
        let mut out = vec![T::zero(); geom.batch * oh * ow * pl];
        for_each_tap(geom, |dst, src_row| {
            let (d, s) = (dst * geom.channels, src_row * geom.channels);
            out[d..d + geom.channels].copy_from_slice(&src[s..s + geom.channels]);
        });
        let rg = self.requires_grad(x);
        Ok(self.push(
            Tensor::new(vec![geom.batch * oh * ow, pl], out)?,
            Op::Im2Col(x, geom),
            rg,
        ))
    }

    /// Scaled dot-product self-attention, independently within each
    /// `(start, len)` row segment and each of `heads` column blocks.
    ///
    /// Output column block `h` is head `h`'s result before any output
    /// projection.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: &[(usize, usize)], heads: usize) -> Result<Var> {
        let (n, d) = self.value(q).dims2("attention")?;
        for other in [k, v] {
            if self.shape(other) != [n, d] {
                return Err(TensorError::ShapeMismatch {
                    op: "attention",
                    lhs: vec![n, d],
                    rhs: self.shape(other).to_vec(),
                });
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(contract("attention", format!("{heads} heads do not divide width {d}")));
        }
        for &(s, l) in segments {
            if l == 0 || s + l > n {
                return Err(contract("attention", format!("segment {s}+{l} outside {n} rows")));
            }
        }
        let hd = d / heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
        let mut out = vec![T::zero(); n * d];
        let mut probs = Vec::with_capacity(segments.iter().map(|s| s.1 * s.1 * heads).sum());
        for &(start, len) in segments {
            for h in 0..heads {
                let col = h * hd;
                let base = probs.len();
                probs.resize(base + len * len, T::zero());
                let p = &mut probs[base..];
                for i in 0..len {
                    let qi = &qs[(start + i) * d + col..(start + i) * d + col + hd];
                    let mut mx = T::neg_infinity();
                    for j in 0..len {
                        let kj = &ks[(start + j) * d + col..(start + j) * d + col + hd];
                        let s = dot(qi, kj) * scale;
                        p[i * len + j] = s;
                        mx = mx.max(s);
                    }
                    let mut total = T::zero();
                    for j in 0..len {
                        let e = (p[i * len + j] - mx).exp();
                        p[i * len + j] = e;
                        total += e;
                    }
                    let o = &mut out[(start + i) * d + col..(start + i) * d + col + hd];
                    for j in 0..len {
                        p[i * len + j] /= total;
                        let w = p[i * len + j];
                        let vj = &vs[(start + j) * d + col..(start + j) * d + col + hd];
                        o.iter_mut().zip(vj).for_each(|(a, &b)| *a += w * b);
                    }
                }
            }
        }
        let rg = [q, k, v].iter().any(|&x| self.requires_grad(x));
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::Attention {
                q,
                k,
                v,
                segments: segments.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Weighted pooling: row `r` of the output is
    /// `Σ_j weights[r, j] · feats[groups[r]·k + j]` with `k` the width of
    /// `weights`.
    pub fn attend(&mut self, weights: Var, feats: Var, groups: &[usize]) -> Result<Var> {
        let (n, k) = self.value(weights).dims2("attend")?;
        let (fr, d) = self.value(feats).dims2("attend")?;
        if groups.len() != n || fr % k != 0 {
            return Err(contract(
                "attend",
                format!(
                    "{n} weight rows, {} groups, {fr} feature rows for width {k}",
                    groups.len()
                ),
            ));
        }
        if let Some(&g) = groups.iter().find(|&&g| (g + 1) * k > fr) {
            return Err(TensorError::IndexOutOfRange {
                op: "attend",
                index: g,
                extent: fr / k,
            });
        }
        let (w, f) = (self.data(weights), self.data(feats));
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let o = &mut out[r * d..(r + 1) * d];
            for j in 0..k {
                let a = w[r * k + j];
                let row = (groups[r] * k + j) * d;
                o.iter_mut().zip(&f[row..row + d]).for_each(|(x, &y)| *x += a * y);
            }
        }
        let rg = self.requires_grad(weights) || self.requires_grad(feats);
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::Attend {
                weights,
                feats,
                groups: groups.to_vec(),
            },
            rg,
        ))
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Calls `f(patch_slot, source_row)` for every in-bounds kernel tap, where
/// `patch_slot` indexes `channels`-wide slots of the unfolded output.
pub(crate) fn for_each_tap(geom: ConvGeom, mut f: impl FnMut(usize, usize)) {
    let (oh, ow) = (geom.out_height(), geom.out_width());
    let kk = geom.kernel * geom.kernel;
    for b in 0..geom.batch {
        for oy in 0..oh {
            for ox in 0..ow {
                let out_row = (b * oh + oy) * ow + ox;
                for ky in 0..geom.kernel {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= geom.height as isize {
                        continue;
                    }
                    for kx in 0..geom.kernel {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix < 0 || ix >= geom.width as isize {
                            continue;
                        }
                        let src = (b * geom.height + iy as usize) * geom.width + ix as usize;
                        f(out_row * kk + ky * geom.kernel + kx, src);
                    }
                }
            }
        }
    }
}
