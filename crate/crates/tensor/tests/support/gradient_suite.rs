//! Randomized gradient checks for every primitive and layer, shared by the
//! tensor crate's tests and the acceptance suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vti_tensor::nn::{
    Conv2d, EmbeddingTable, LayerNorm, Linear, LstmCell, LstmState, MultiHeadAttention, TransformerLayer,
};
use vti_tensor::{
    grad_check, grad_check_with_params, ConvGeom, GradCheckReport, ParamStore, Result, Tape, Tensor, Var,
};

pub const EPS: f64 = 1e-5;

pub struct Case {
    pub name: &'static str,
    pub trial: fn(&mut ChaCha8Rng, f64) -> GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Values in [-1, 1] kept at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Scalarizes `y` as `Σ y ⊙ w` so every output coordinate matters.
fn project(tape: &mut Tape<'_, f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(w.clone());
    let yw = tape.mul(y, w)?;
    Ok(tape.sum(yw))
}

macro_rules! unary_case {
    ($name:literal, $method:ident, $gen:expr) => {
        Case {
            name: $name,
            trial: |rng, tol| {
                let x: Tensor<f64> = $gen(rng);
                let w = uniform(rng, x.shape(), -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.$method(v[0]);
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        }
    };
}

macro_rules! binary_case {
    ($name:literal, $method:ident, $lhs:expr, $rhs:expr, $out:expr) => {
        Case {
            name: $name,
            trial: |rng, tol| {
                let a = uniform(rng, &$lhs, -1.0, 1.0);
                let b = uniform(rng, &$rhs, -1.0, 1.0);
                let w = uniform(rng, &$out, -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.$method(v[0], v[1])?;
                        project(t, y, &w)
                    },
                    &[a, b],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        }
    };
}

pub fn primitive_cases() -> Vec<Case> {
    vec![
        binary_case!("add", add, [3, 4], [3, 4], [3, 4]),
        binary_case!("add_row_broadcast", add, [3, 4], [4], [3, 4]),
        binary_case!("add_scalar_broadcast", add, [1], [2, 3], [2, 3]),
        binary_case!("sub", sub, [3, 4], [3, 4], [3, 4]),
        binary_case!("sub_row_broadcast", sub, [1, 4], [3, 4], [3, 4]),
        binary_case!("mul", mul, [3, 4], [3, 4], [3, 4]),
        binary_case!("mul_row_broadcast", mul, [3, 4], [1, 4], [3, 4]),
        binary_case!("matmul", matmul, [3, 5], [5, 2], [3, 2]),
        unary_case!("tanh", tanh, |r| uniform(r, &[3, 4], -2.0, 2.0)),
        unary_case!("sigmoid", sigmoid, |r| uniform(r, &[3, 4], -3.0, 3.0)),
        unary_case!("relu", relu, |r| away_from_zero(r, &[3, 4], 0.05)),
        unary_case!("exp", exp, |r| uniform(r, &[3, 4], -2.0, 2.0)),
        Case {
            name: "log",
            trial: |rng, tol| {
                let x = uniform(rng, &[3, 4], 0.2, 3.0);
                let w = uniform(rng, &[3, 4], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.log(v[0])?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "scale_offset",
            trial: |rng, tol| {
                let x = uniform(rng, &[5], -1.0, 1.0);
                let w = uniform(rng, &[5], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.scale(v[0], -1.7);
                        let y = t.offset(y, 0.3);
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "clamp",
            trial: |rng, tol| {
                let x = away_from_zero(rng, &[12], 0.05);
                let w = uniform(rng, &[12], -1.0, 1.0);
                // bounds at ±0.5 ± gap so no coordinate sits on a kink
                let x = Tensor::from_f64(
                    &[12],
                    &x.data()
                        .iter()
                        .map(|&v| if (v.abs() - 0.5).abs() < 0.02 { v * 1.1 } else { v })
                        .collect::<Vec<_>>(),
                )
                .unwrap();
                grad_check(
                    |t, v| {
                        let y = t.clamp(v[0], -0.5, 0.5);
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "dropout",
            trial: |rng, tol| {
                let x = uniform(rng, &[10], -1.0, 1.0);
                let keep: Vec<bool> = (0..10).map(|_| rng.random_bool(0.5)).collect();
                let w = uniform(rng, &[10], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.dropout(v[0], &keep, 0.5)?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "transpose_reshape",
            trial: |rng, tol| {
                let x = uniform(rng, &[3, 4], -1.0, 1.0);
                let w = uniform(rng, &[2, 6], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.transpose(v[0])?;
                        let y = t.reshape(y, &[2, 6])?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "softmax_rows",
            trial: |rng, tol| {
                let x = uniform(rng, &[3, 5], -2.0, 2.0);
                let w = uniform(rng, &[3, 5], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.softmax(v[0], 1)?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "softmax_cols",
            trial: |rng, tol| {
                let x = uniform(rng, &[4, 3], -2.0, 2.0);
                let w = uniform(rng, &[4, 3], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.softmax(v[0], 0)?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "softmax_cross_entropy",
            trial: |rng, tol| {
                let x = uniform(rng, &[4, 6], -2.0, 2.0);
                let targets: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
                let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
                grad_check(|t, v| t.softmax_cross_entropy(v[0], &targets, &weights), &[x], EPS, tol).unwrap()
            },
        },
        Case {
            name: "sum_mean_sum_axis",
            trial: |rng, tol| {
                let x = uniform(rng, &[3, 4], -1.0, 1.0);
                let w0 = uniform(rng, &[1, 4], -1.0, 1.0);
                let w1 = uniform(rng, &[3, 1], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let a = t.sum_axis(v[0], 0)?;
                        let a = project(t, a, &w0)?;
                        let b = t.sum_axis(v[0], 1)?;
                        let b = project(t, b, &w1)?;
                        let m = t.mean(v[0]);
                        let sq = t.square(m)?;
                        let s = t.add(a, b)?;
                        t.add(s, sq)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "concat",
            trial: |rng, tol| {
                let a = uniform(rng, &[2, 3], -1.0, 1.0);
                let b = uniform(rng, &[2, 2], -1.0, 1.0);
                let c = uniform(rng, &[1, 5], -1.0, 1.0);
                let w = uniform(rng, &[3, 5], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let ab = t.concat(&[v[0], v[1]], 1)?;
                        let abc = t.concat(&[ab, v[2]], 0)?;
                        project(t, abc, &w)
                    },
                    &[a, b, c],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "slice_rows_cols",
            trial: |rng, tol| {
                let x = uniform(rng, &[4, 5], -1.0, 1.0);
                let w = uniform(rng, &[2, 3], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let r = t.slice_rows(v[0], 1, 2)?;
                        let c = t.slice_cols(r, 2, 3)?;
                        project(t, c, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "gather_rows",
            trial: |rng, tol| {
                let x = uniform(rng, &[4, 3], -1.0, 1.0);
                let idx: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
                let w = uniform(rng, &[6, 3], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.gather_rows(v[0], &idx)?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "layer_norm",
            trial: |rng, tol| {
                let x = uniform(rng, &[3, 6], -2.0, 2.0);
                let g = uniform(rng, &[6], 0.5, 1.5);
                let b = uniform(rng, &[6], -0.5, 0.5);
                let w = uniform(rng, &[3, 6], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                        project(t, y, &w)
                    },
                    &[x, g, b],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "im2col",
            trial: |rng, tol| {
                let geom = ConvGeom {
                    batch: 2,
                    height: 5,
                    width: 4,
                    channels: 2,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                };
                let x = uniform(rng, &[2 * 5 * 4, 2], -1.0, 1.0);
                let w = uniform(
                    rng,
                    &[2 * geom.out_height() * geom.out_width(), geom.patch_len()],
                    -1.0,
                    1.0,
                );
                grad_check(
                    |t, v| {
                        let y = t.im2col(v[0], geom)?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "attention",
            trial: |rng, tol| {
                let q = uniform(rng, &[7, 6], -1.0, 1.0);
                let k = uniform(rng, &[7, 6], -1.0, 1.0);
                let v = uniform(rng, &[7, 6], -1.0, 1.0);
                let w = uniform(rng, &[7, 6], -1.0, 1.0);
                grad_check(
                    |t, x| {
                        let y = t.attention(x[0], x[1], x[2], &[(0, 3), (3, 1), (4, 3)], 2)?;
                        project(t, y, &w)
                    },
                    &[q, k, v],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "attend",
            trial: |rng, tol| {
                let a = uniform(rng, &[3, 4], 0.0, 1.0);
                let f = uniform(rng, &[8, 5], -1.0, 1.0);
                let w = uniform(rng, &[3, 5], -1.0, 1.0);
                grad_check(
                    |t, v| {
                        let y = t.attend(v[0], v[1], &[1, 0, 1])?;
                        project(t, y, &w)
                    },
                    &[a, f],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
    ]
}

fn seeded_store(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new(), ChaCha8Rng::seed_from_u64(rng.random()))
}

pub fn layer_cases() -> Vec<Case> {
    vec![
        Case {
            name: "linear",
            trial: |rng, tol| {
                let (mut store, mut init) = seeded_store(rng);
                let lin = Linear::new(&mut store, "lin", 4, 3, &mut init).unwrap();
                let x = uniform(rng, &[2, 4], -1.0, 1.0);
                let w = uniform(rng, &[2, 3], -1.0, 1.0);
                grad_check_with_params(
                    &store,
                    |t, v| {
                        let y = lin.forward(t, v[0])?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "embedding",
            trial: |rng, tol| {
                let (mut store, mut init) = seeded_store(rng);
                let emb = EmbeddingTable::new(&mut store, "emb", 5, 4, 8, &mut init).unwrap();
                let ids: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
                let w = uniform(rng, &[4, 4], -1.0, 1.0);
                grad_check_with_params(
                    &store,
                    |t, _| {
                        let y = emb.embed(t, &ids, true)?;
                        project(t, y, &w)
                    },
                    &[],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "layer_norm_layer",
            trial: |rng, tol| {
                let mut store = ParamStore::new();
                let ln = LayerNorm::new(&mut store, "ln", 5).unwrap();
                let x = uniform(rng, &[3, 5], -2.0, 2.0);
                let w = uniform(rng, &[3, 5], -1.0, 1.0);
                grad_check_with_params(
                    &store,
                    |t, v| {
                        let y = ln.forward(t, v[0])?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "lstm_cell",
            trial: |rng, tol| {
                let (mut store, mut init) = seeded_store(rng);
                let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut init).unwrap();
                let x = uniform(rng, &[2, 3], -1.0, 1.0);
                let h = uniform(rng, &[2, 4], -1.0, 1.0);
                let c = uniform(rng, &[2, 4], -1.0, 1.0);
                let (wh, wc) = (uniform(rng, &[2, 4], -1.0, 1.0), uniform(rng, &[2, 4], -1.0, 1.0));
                grad_check_with_params(
                    &store,
                    |t, v| {
                        let s = cell.step(t, v[0], LstmState { h: v[1], c: v[2] })?;
                        let a = project(t, s.h, &wh)?;
                        let b = project(t, s.c, &wc)?;
                        t.add(a, b)
                    },
                    &[x, h, c],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "multi_head_attention",
            trial: |rng, tol| {
                let (mut store, mut init) = seeded_store(rng);
                let mha = MultiHeadAttention::new(&mut store, "mha", 6, 3, true, &mut init).unwrap();
                let x = uniform(rng, &[5, 6], -1.0, 1.0);
                let w = uniform(rng, &[5, 6], -1.0, 1.0);
                grad_check_with_params(
                    &store,
                    |t, v| {
                        let y = mha.forward(t, v[0], &[(0, 2), (2, 3)])?;
                        project(t, y.output, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "transformer_layer",
            trial: |rng, tol| {
                let (mut store, mut init) = seeded_store(rng);
                let layer = TransformerLayer::new(&mut store, "tf", 4, 2, 6, &mut init).unwrap();
                let x = uniform(rng, &[4, 4], -1.0, 1.0);
                let w = uniform(rng, &[4, 4], -1.0, 1.0);
                grad_check_with_params(
                    &store,
                    |t, v| {
                        let y = layer.forward(t, v[0], &[(0, 4)])?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
        Case {
            name: "conv2d",
            trial: |rng, tol| {
                let (mut store, mut init) = seeded_store(rng);
                let conv = Conv2d::new(&mut store, "conv", 2, 3, 3, 2, 1, &mut init).unwrap();
                let x = uniform(rng, &[4 * 4, 2], -1.0, 1.0);
                let w = uniform(rng, &[4, 3], -1.0, 1.0);
                grad_check_with_params(
                    &store,
                    |t, v| {
                        let (y, _, _) = conv.forward(t, v[0], 1, 4, 4)?;
                        project(t, y, &w)
                    },
                    &[x],
                    EPS,
                    tol,
                )
                .unwrap()
            },
        },
    ]
}

/// Runs `trials` random trials of a case; returns the worst relative error.
pub fn run_case(case: &Case, seed: u64, trials: usize, tol: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| (case.trial)(&mut rng, tol).max_rel_err)
        .fold(0.0, f64::max)
}
