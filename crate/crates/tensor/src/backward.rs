//! Vector-Jacobian products for every primitive recorded on a [`Tape`].

use crate::ops::{dot, for_each_tap, operand_index};
use crate::real::{gemm_acc, Real, Trans};
use crate::tape::{Bcast, Op, Tape, Var};

impl<T: Real> Tape<'_, T> {
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn zeros_like(&self, v: Var) -> Vec<T> {
        vec![T::zero(); self.nodes[v.0].value.len()]
    }

    /// Scatter `g` (output-shaped) back onto operand `v` of a broadcasting op.
    fn reduce_to(
        &self,
        v: Var,
        g: &[T],
        (bc, out_cols): (Bcast, usize),
        lhs: bool,
        scale: impl Fn(usize) -> T,
    ) -> Vec<T> {
        let mut acc = self.zeros_like(v);
        for (i, &gi) in g.iter().enumerate() {
            let (ia, ib) = operand_index(bc, i, out_cols);
            let idx = if lhs { ia } else { ib };
            acc[idx] += gi * scale(i);
        }
        acc
    }

    pub(crate) fn vjp(&self, node: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &self.nodes[node].value;
        let y = out.data();
        let out_cols = *out.shape().last().unwrap_or(&1);
        match &self.nodes[node].op {
            Op::Leaf => {}
            &Op::Add(a, b, bc) | &Op::Sub(a, b, bc) => {
                let sign = if matches!(self.nodes[node].op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if self.needs(a) {
                    let ga = self.reduce_to(a, g, (bc, out_cols), true, |_| T::one());
                    self.acc(grads, a, ga);
                }
                if self.needs(b) {
                    let gb = self.reduce_to(b, g, (bc, out_cols), false, |_| sign);
                    self.acc(grads, b, gb);
                }
            }
            &Op::Mul(a, b, bc) => {
                let cols = out_cols;
                let (da, db) = (self.data(a), self.data(b));
                if self.needs(a) {
                    let ga = self.reduce_to(a, g, (bc, out_cols), true, |i| db[operand_index(bc, i, cols).1]);
                    self.acc(grads, a, ga);
                }
                if self.needs(b) {
                    let gb = self.reduce_to(b, g, (bc, out_cols), false, |i| da[operand_index(bc, i, cols).0]);
                    self.acc(grads, b, gb);
                }
            }
            &Op::Scale(a, c) => self.acc(grads, a, g.iter().map(|&v| v * c).collect()),
            &Op::Offset(a) | &Op::Reshape(a) => self.acc(grads, a, g.to_vec()),
            &Op::Tanh(a) => self.acc(
                grads,
                a,
                g.iter().zip(y).map(|(&g, &y)| g * (T::one() - y * y)).collect(),
            ),
            &Op::Sigmoid(a) => self.acc(
                grads,
                a,
                g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)).collect(),
            ),
            &Op::Relu(a) => self.acc(
                grads,
                a,
                g.iter()
                    .zip(y)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect(),
            ),
            &Op::Exp(a) => self.acc(grads, a, g.iter().zip(y).map(|(&g, &y)| g * y).collect()),
            &Op::Log(a) => self.acc(grads, a, g.iter().zip(self.data(a)).map(|(&g, &x)| g / x).collect()),
            &Op::Clamp(a, lo, hi) => self.acc(
                grads,
                a,
                g.iter()
                    .zip(self.data(a))
                    .map(|(&g, &x)| if x >= lo && x <= hi { g } else { T::zero() })
                    .collect(),
            ),
            Op::Dropout(a, mask) => self.acc(grads, *a, g.iter().zip(mask).map(|(&g, &m)| g * m).collect()),
            &Op::MatMul(a, b) => {
                let (m, k) = dims(self, a);
                let n = out.shape()[1];
                if self.needs(a) {
                    let mut ga = self.zeros_like(a);
                    gemm_acc(g, m, n, Trans::No, self.data(b), k, n, Trans::Yes, &mut ga);
                    self.acc(grads, a, ga);
                }
                if self.needs(b) {
                    let mut gb = self.zeros_like(b);
                    gemm_acc(self.data(a), m, k, Trans::Yes, g, m, n, Trans::No, &mut gb);
                    self.acc(grads, b, gb);
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = dims(self, a);
                let mut ga = self.zeros_like(a);
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                self.acc(grads, a, ga);
            }
            &Op::Softmax(a, axis) => {
                let (outer, len, inner) = crate::ops::axis_split(out.shape(), axis);
                let mut ga = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let s: T = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            ga[at(j)] = y[at(j)] * (g[at(j)] - s);
                        }
                    }
                }
                self.acc(grads, a, ga);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let vocab = self.shape(*logits)[1];
                let mut gl = probs.clone();
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    let row = &mut gl[r * vocab..(r + 1) * vocab];
                    row[t] -= T::one();
                    let s = w * g[0];
                    row.iter_mut().for_each(|v| *v *= s);
                }
                self.acc(grads, *logits, gl);
            }
            &Op::Sum(a) => self.acc(grads, a, vec![g[0]; self.nodes[a.0].value.len()]),
            &Op::SumAxis(a, axis) => {
                let (r, c) = dims(self, a);
                let ga = (0..r * c)
                    .map(|i| if axis == 0 { g[i % c] } else { g[i / c] })
                    .collect();
                self.acc(grads, a, ga);
            }
            Op::Concat(parts, axis) => {
                let out_c = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = dims(self, p);
                    if self.needs(p) {
                        let gp = if *axis == 0 {
                            g[offset * out_c..(offset + r) * out_c].to_vec()
                        } else {
                            let mut gp = Vec::with_capacity(r * c);
                            for i in 0..r {
                                gp.extend_from_slice(&g[i * out_c + offset..i * out_c + offset + c]);
                            }
                            gp
                        };
                        self.acc(grads, p, gp);
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            &Op::SliceRows(a, start) => {
                let c = dims(self, a).1;
                let mut ga = self.zeros_like(a);
                ga[start * c..start * c + g.len()].copy_from_slice(g);
                self.acc(grads, a, ga);
            }
            &Op::SliceCols(a, start) => {
                let (r, c) = dims(self, a);
                let len = out.shape()[1];
                let mut ga = self.zeros_like(a);
                for i in 0..r {
                    ga[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                self.acc(grads, a, ga);
            }
            Op::GatherRows(a, index) => {
                let c = dims(self, *a).1;
                let mut ga = self.zeros_like(*a);
                for (r, &src) in index.iter().enumerate() {
                    ga[src * c..(src + 1) * c]
                        .iter_mut()
                        .zip(&g[r * c..(r + 1) * c])
                        .for_each(|(x, &v)| *x += v);
                }
                self.acc(grads, *a, ga);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, c) = dims(self, *x);
                let gs = self.data(*gamma);
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut gg = vec![T::zero(); c];
                    let mut gb = vec![T::zero(); c];
                    for i in 0..r {
                        for j in 0..c {
                            gg[j] += g[i * c + j] * xhat[i * c + j];
                            gb[j] += g[i * c + j];
                        }
                    }
                    self.acc(grads, *gamma, gg);
                    self.acc(grads, *beta, gb);
                }
                if self.needs(*x) {
                    let n = T::of(c as f64);
                    let mut gx = vec![T::zero(); r * c];
                    for i in 0..r {
                        let dxhat: Vec<T> = (0..c).map(|j| g[i * c + j] * gs[j]).collect();
                        let h = &xhat[i * c..(i + 1) * c];
                        let s1: T = dxhat.iter().copied().sum();
                        let s2 = dot(&dxhat, h);
                        for j in 0..c {
                            gx[i * c + j] = inv_std[i] / n * (n * dxhat[j] - s1 - h[j] * s2);
                        }
                    }
                    self.acc(grads, *x, gx);
                }
            }
            &Op::Im2Col(x, geom) => {
                let mut gx = self.zeros_like(x);
                let ch = geom.channels;
                for_each_tap(geom, |dst, src| {
                    let (d, s) = (dst * ch, src * ch);
                    gx[s..s + ch].iter_mut().zip(&g[d..d + ch]).for_each(|(a, &b)| *a += b);
                });
                self.acc(grads, x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                segments,
                heads,
                probs,
            } => self.attention_vjp(g, (*q, *k, *v), segments, *heads, probs, grads),
            Op::Attend { weights, feats, groups } => {
                let (n, k) = dims(self, *weights);
                let d = dims(self, *feats).1;
                let (w, f) = (self.data(*weights), self.data(*feats));
                if self.needs(*weights) {
                    let mut gw = vec![T::zero(); n * k];
                    for r in 0..n {
                        for j in 0..k {
                            let row = (groups[r] * k + j) * d;
                            gw[r * k + j] = dot(&g[r * d..(r + 1) * d], &f[row..row + d]);
                        }
                    }
                    self.acc(grads, *weights, gw);
                }
                if self.needs(*feats) {
                    let mut gf = self.zeros_like(*feats);
                    for r in 0..n {
                        for j in 0..k {
                            let a = w[r * k + j];
                            let row = (groups[r] * k + j) * d;
                            gf[row..row + d]
                                .iter_mut()
                                .zip(&g[r * d..(r + 1) * d])
                                .for_each(|(x, &y)| *x += a * y);
                        }
                    }
                    self.acc(grads, *feats, gf);
                }
            }
        }
    }

    fn attention_vjp(
        &self,
        g: &[T],
        (q, k, v): (Var, Var, Var),
        segments: &[(usize, usize)],
        heads: usize,
        probs: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (_, d) = dims(self, q);
        let hd = d / heads;
        let scale = T::one() / T::of(hd as f64).sqrt();
        let (qs, ks, vs) = (self.data(q), self.data(k), self.data(v));
        let mut gq = self.zeros_like(q);
        let mut gk = self.zeros_like(k);
        let mut gv = self.zeros_like(v);
        let mut base = 0;
        for &(start, len) in segments {
            for h in 0..heads {
                let col = h * hd;
                let p = &probs[base..base + len * len];
                base += len * len;
                let row = |m: usize| (start + m) * d + col;
                let mut ds = vec![T::zero(); len];
                for i in 0..len {
                    let go = &g[row(i)..row(i) + hd];
                    for j in 0..len {
                        ds[j] = dot(go, &vs[row(j)..row(j) + hd]);
                        let pij = p[i * len + j];
                        gv[row(j)..row(j) + hd]
                            .iter_mut()
                            .zip(go)
                            .for_each(|(a, &b)| *a += pij * b);
                    }
                    let s: T = (0..len).map(|j| ds[j] * p[i * len + j]).sum();
                    for j in 0..len {
                        let dsc = p[i * len + j] * (ds[j] - s) * scale;
                        for c in 0..hd {
                            gq[row(i) + c] += dsc * ks[row(j) + c];
                            gk[row(j) + c] += dsc * qs[row(i) + c];
                        }
                    }
                }
            }
        }
        self.acc(grads, q, gq);
        self.acc(grads, k, gk);
        self.acc(grads, v, gv);
    }
}

fn dims<T: Real>(tape: &Tape<'_, T>, v: Var) -> (usize, usize) {
    let s = tape.shape(v);
    (s[0], s[1])
}
