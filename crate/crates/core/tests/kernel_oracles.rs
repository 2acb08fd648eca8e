//! Kernel-level oracles: naive recurrences, explicit reordering, dense
//! attention equivalence, and finite-difference checks through whole kernels.

use nnuzoo::check::{finite_diff_grad, grad_check, rel_err, rel_err_tensors};
use nnuzoo::kernels::{
    AttentionWeights, DepthwiseSeparableConv, GatedSpatialConv, PatchExpand, PatchMerge,
    ScanConfig, ScanParams, Ss2d, TraversalOrder, WindowAttention,
};
use nnuzoo::nn::Linear;
use nnuzoo::tensor::{Graph, Parameterized, Tensor, Var};
use nnuzoo::testdata::uniform_tensor;
use nnuzoo::Result;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_TOL: f64 = 1e-4;

fn assert_grad(inputs: &[Tensor<f64>], build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
    let res = grad_check(inputs, 1e-5, build).expect("graph build failed");
    assert!(res.worst < FD_TOL, "worst rel err {}", res.worst);
}

// -------------------------------------------------------------- scan oracle

/// Naive recurrence with a fully materialized hidden state, written from the
/// defining formulas with no shortcuts.
#[allow(clippy::too_many_arguments)]
fn naive_scan(
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    d: &[f64],
    bs: usize,
    l: usize,
    di: usize,
    n: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; bs * l * di];
    for bi in 0..bs {
        let mut h = vec![0.0; di * n];
        for t in 0..l {
            for dj in 0..di {
                let dv = delta[(bi * l + t) * di + dj];
                let xv = x[(bi * l + t) * di + dj];
                for ni in 0..n {
                    let abar = (dv * a[dj * n + ni]).exp();
                    let bbar = dv * b[(bi * l + t) * n + ni];
                    h[dj * n + ni] = abar * h[dj * n + ni] + bbar * xv;
                }
                let mut acc = 0.0;
                for ni in 0..n {
                    acc += c[(bi * l + t) * n + ni] * h[dj * n + ni];
                }
                y[(bi * l + t) * di + dj] = acc + d[dj] * xv;
            }
        }
    }
    y
}

#[test]
fn selective_scan_matches_naive_recurrence_up_to_l4096() {
    for &l in &[1usize, 7, 64, 1024, 4096] {
        let (bs, di, n) = (2usize, 3usize, 4usize);
        let x = uniform_tensor::<f64>(&[bs, l, di], -1.0, 1.0, 201 + l as u64);
        let delta = uniform_tensor::<f64>(&[bs, l, di], 0.05, 0.8, 202 + l as u64);
        let a = uniform_tensor::<f64>(&[di, n], -1.2, -0.1, 203);
        let b = uniform_tensor::<f64>(&[bs, l, n], -1.0, 1.0, 204 + l as u64);
        let c = uniform_tensor::<f64>(&[bs, l, n], -1.0, 1.0, 205 + l as u64);
        let d = uniform_tensor::<f64>(&[di], -0.5, 0.5, 206);

        let oracle = naive_scan(
            x.data(),
            delta.data(),
            a.data(),
            b.data(),
            c.data(),
            d.data(),
            bs,
            l,
            di,
            n,
        );

        let mut g = Graph::<f64>::new();
        let xv = g.constant(x);
        let dv = g.constant(delta);
        let av = g.constant(a);
        let bv = g.constant(b);
        let cv = g.constant(c);
        let ddv = g.constant(d);
        let y = g.selective_scan(xv, dv, av, bv, cv, ddv).unwrap();
        assert!(
            rel_err(g.value(y).data(), &oracle) < 1e-6,
            "scan mismatch at L={l}"
        );
    }
}

// -------------------------------------------------------------- ss2d oracle

/// Plain matrix multiply for the oracle path.
fn matvec(mat: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (rows, cols) = (mat.shape()[0], mat.shape()[1]);
    assert_eq!(rows, x.len());
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c] += x[r] * mat.at(&[r, c]);
        }
    }
    out
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Explicit-reordering oracle for the merged (pre-projection) SS2D map:
/// materialize each direction's sequence, rebuild delta/B/C from the raw
/// projection weights, run the naive recurrence, scatter back, sum.
fn ss2d_oracle(ss: &Ss2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let (bs, ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let l = h * w;
    let mut out = Tensor::zeros(&[bs, ch, h, w]);
    for (order, params) in &ss.directions {
        let map = order.index_map(h, w);
        let n = params.x_proj.w.value.shape()[1];
        let dt_rank = n - 2 * (params.a_log.value.shape()[1]);
        let state_n = params.a_log.value.shape()[1];

        for bi in 0..bs {
            // Materialize the reordered sequence (L, C).
            let mut seq = vec![0.0; l * ch];
            for t in 0..l {
                let pos = map[t];
                for ci in 0..ch {
                    seq[t * ch + ci] = x.at(&[bi, ci, pos / w, pos % w]);
                }
            }
            // Per-token projections.
            let mut delta = vec![0.0; l * ch];
            let mut bmat = vec![0.0; l * state_n];
            let mut cmat = vec![0.0; l * state_n];
            for t in 0..l {
                let tok = &seq[t * ch..(t + 1) * ch];
                let proj = matvec(&params.x_proj.w.value, tok);
                let dt_low = &proj[..dt_rank];
                bmat[t * state_n..(t + 1) * state_n]
                    .copy_from_slice(&proj[dt_rank..dt_rank + state_n]);
                cmat[t * state_n..(t + 1) * state_n]
                    .copy_from_slice(&proj[dt_rank + state_n..dt_rank + 2 * state_n]);
                let mut dt = matvec(&params.dt_proj.w.value, dt_low);
                if let Some(bias) = &params.dt_proj.b {
                    for (v, b) in dt.iter_mut().zip(bias.value.data()) {
                        *v += b;
                    }
                }
                for (o, v) in delta[t * ch..(t + 1) * ch].iter_mut().zip(dt) {
                    *o = softplus(v);
                }
            }
            let a: Vec<f64> = params
                .a_log
                .value
                .data()
                .iter()
                .map(|&v| -v.exp())
                .collect();
            let y = naive_scan(
                &seq,
                &delta,
                &a,
                &bmat,
                &cmat,
                params.d_skip.value.data(),
                1,
                l,
                ch,
                state_n,
            );
            // Scatter back to the grid and accumulate.
            for t in 0..l {
                let pos = map[t];
                for ci in 0..ch {
                    let cur = out.at(&[bi, ci, pos / w, pos % w]);
                    out.set(&[bi, ci, pos / w, pos % w], cur + y[t * ch + ci]);
                }
            }
        }
    }
    out
}

#[test]
fn ss2d_matches_explicit_reordering_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = ScanConfig { state_dim: 3, dt_rank_divisor: 2 };
    let ss = Ss2d::<f64>::new("ss", 2, &cfg, &mut rng);
    let x = uniform_tensor::<f64>(&[1, 2, 3, 3], -1.0, 1.0, 32);

    let oracle = ss2d_oracle(&ss, &x);

    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let merged = ss.merged(&mut g, xv).unwrap();
    assert!(
        rel_err_tensors(g.value(merged), &oracle) < 1e-6,
        "rel err {}",
        rel_err_tensors(g.value(merged), &oracle)
    );
}

// --------------------------------------------------------- attention oracle

#[test]
fn full_window_attention_equals_dense_mhsa() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (h, w, c, heads) = (4usize, 4usize, 8usize, 2usize);
    let wa = WindowAttention::<f64>::new("wa", c, heads, h, 0, &mut rng).unwrap();
    // Same projection weights for the dense reference.
    let mut dense = AttentionWeights::<f64>::new("dense", c, heads, &mut rng).unwrap();
    let mut src = Vec::new();
    wa.attn.visit(&mut |p| src.push(p.value.clone()));
    let mut i = 0;
    dense.visit_mut(&mut |p| {
        p.value = src[i].clone();
        i += 1;
    });

    let x = uniform_tensor::<f64>(&[2, h, w, c], -1.0, 1.0, 42);
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let win = wa.forward(&mut g, xv).unwrap();

    let flat = g.reshape(xv, &[2, h * w, c]).unwrap();
    let ref_out = dense.mhsa(&mut g, flat).unwrap();
    let win_flat = g.reshape(win, &[2, h * w, c]).unwrap();
    assert!(
        rel_err(g.value(win_flat).data(), g.value(ref_out).data()) < 1e-6,
        "windowed vs dense mismatch"
    );
}

#[test]
fn zero_logits_give_uniform_attention_window_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let (hw, c) = (4usize, 3usize);
    let mut wa = WindowAttention::<f64>::new("wa", c, 1, hw, 0, &mut rng).unwrap();
    // q/k zeroed, v and o exact identity, biases zero.
    wa.attn.q.w.value = Tensor::zeros(&[c, c]);
    wa.attn.k.w.value = Tensor::zeros(&[c, c]);
    wa.attn.v = Linear::identity("wa.v", c);
    wa.attn.o = Linear::identity("wa.o", c);
    if let Some(b) = wa.attn.q.b.as_mut() {
        b.value = Tensor::zeros(&[c]);
    }
    if let Some(b) = wa.attn.k.b.as_mut() {
        b.value = Tensor::zeros(&[c]);
    }

    let x = uniform_tensor::<f64>(&[1, hw, hw, c], -1.0, 1.0, 44);
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let y = wa.forward(&mut g, xv).unwrap();

    // One window covering everything: every output equals the spatial mean.
    for ci in 0..c {
        let mut mean = 0.0;
        for r in 0..hw {
            for cc in 0..hw {
                mean += x.at(&[0, r, cc, ci]);
            }
        }
        mean /= (hw * hw) as f64;
        for r in 0..hw {
            for cc in 0..hw {
                assert!((g.value(y).at(&[0, r, cc, ci]) - mean).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn mhsa_matches_per_head_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let (b, l, c, heads) = (1usize, 5usize, 6usize, 2usize);
    let aw = AttentionWeights::<f64>::new("a", c, heads, &mut rng).unwrap();
    let x = uniform_tensor::<f64>(&[b, l, c], -1.0, 1.0, 46);

    // Oracle: explicit per-head loops with plain matrix math.
    let lin = |t: &Linear<f64>, v: &[f64]| -> Vec<f64> {
        let mut out = matvec(&t.w.value, v);
        if let Some(bias) = &t.b {
            for (o, bb) in out.iter_mut().zip(bias.value.data()) {
                *o += bb;
            }
        }
        out
    };
    let dh = c / heads;
    let mut q = vec![vec![0.0; c]; l];
    let mut k = vec![vec![0.0; c]; l];
    let mut v = vec![vec![0.0; c]; l];
    for t in 0..l {
        let tok: Vec<f64> = (0..c).map(|ci| x.at(&[0, t, ci])).collect();
        q[t] = lin(&aw.q, &tok);
        k[t] = lin(&aw.k, &tok);
        v[t] = lin(&aw.v, &tok);
    }
    let mut ctx = vec![vec![0.0; c]; l];
    for hd in 0..heads {
        for i in 0..l {
            let mut logits = vec![0.0; l];
            for j in 0..l {
                let mut s = 0.0;
                for d in 0..dh {
                    s += q[i][hd * dh + d] * k[j][hd * dh + d];
                }
                logits[j] = s / (dh as f64).sqrt();
            }
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
            let denom: f64 = exps.iter().sum();
            for d in 0..dh {
                let mut acc = 0.0;
                for j in 0..l {
                    acc += exps[j] / denom * v[j][hd * dh + d];
                }
                ctx[i][hd * dh + d] = acc;
            }
        }
    }
    let mut oracle = vec![0.0; l * c];
    for t in 0..l {
        let o = lin(&aw.o, &ctx[t]);
        oracle[t * c..(t + 1) * c].copy_from_slice(&o);
    }

    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let y = aw.mhsa(&mut g, xv).unwrap();
    assert!(rel_err(g.value(y).data(), &oracle) < 1e-6);
}

// ------------------------------------------------------------ dsconv oracle

#[test]
fn depthwise_separable_matches_composed_conv_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let ds = DepthwiseSeparableConv::<f64>::new("ds", 3, 5, 3, true, &mut rng);
    let x = uniform_tensor::<f64>(&[2, 3, 6, 6], -1.0, 1.0, 52);

    // Oracle: direct loops, per-channel spatial conv then 1x1 mixing.
    let (b, c, h, w) = (2usize, 3usize, 6usize, 6usize);
    let mut mid = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = ds.dw.b.as_ref().map_or(0.0, |bb| bb.value.data()[ci]);
                    for ky in 0..3usize {
                        for kx in 0..3usize {
                            let iy = y as isize + ky as isize - 1;
                            let ix = xx as isize + kx as isize - 1;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                acc += x.at(&[bi, ci, iy as usize, ix as usize])
                                    * ds.dw.w.value.at(&[ci, 0, ky, kx]);
                            }
                        }
                    }
                    mid[((bi * c + ci) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    let co = 5usize;
    let mut oracle = vec![0.0; b * co * h * w];
    for bi in 0..b {
        for oi in 0..co {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = ds.pw.b.as_ref().map_or(0.0, |bb| bb.value.data()[oi]);
                    for ci in 0..c {
                        acc += mid[((bi * c + ci) * h + y) * w + xx]
                            * ds.pw.w.value.at(&[oi, ci, 0, 0]);
                    }
                    oracle[((bi * co + oi) * h + y) * w + xx] = acc;
                }
            }
        }
    }

    let mut g = Graph::<f64>::new();
    let xv = g.constant(x);
    let y = ds.forward(&mut g, xv).unwrap();
    assert!(rel_err(g.value(y).data(), &oracle) < 1e-6);
}

// ------------------------------------------------- kernel gradient checks

#[test]
fn kernel_gradient_checks_through_x() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let cfg = ScanConfig { state_dim: 2, dt_rank_divisor: 2 };

    let ss = Ss2d::<f64>::new("ss", 2, &cfg, &mut rng);
    let x = uniform_tensor::<f64>(&[1, 2, 3, 3], -0.8, 0.8, 62);
    assert_grad(&[x], |g, v| ss.forward(g, v[0]));

    let wa = WindowAttention::<f64>::new("wa", 4, 2, 2, 1, &mut rng).unwrap();
    let x = uniform_tensor::<f64>(&[1, 4, 4, 4], -0.8, 0.8, 63);
    assert_grad(&[x], |g, v| wa.forward(g, v[0]));

    let aw = AttentionWeights::<f64>::new("aw", 4, 2, &mut rng).unwrap();
    let x = uniform_tensor::<f64>(&[1, 5, 4], -0.8, 0.8, 64);
    assert_grad(&[x], |g, v| aw.mhsa(g, v[0]));

    let pm = PatchMerge::<f64>::new("pm", 3, 6, 2, &mut rng);
    let x = uniform_tensor::<f64>(&[1, 3, 4, 4], -0.8, 0.8, 65);
    assert_grad(&[x], |g, v| pm.forward(g, v[0]));

    let pe = PatchExpand::<f64>::new("pe", 6, 3, 2, &mut rng);
    let x = uniform_tensor::<f64>(&[1, 6, 2, 2], -0.8, 0.8, 66);
    assert_grad(&[x], |g, v| pe.forward(g, v[0]));

    let ds = DepthwiseSeparableConv::<f64>::new("ds", 3, 4, 3, true, &mut rng);
    let x = uniform_tensor::<f64>(&[1, 3, 4, 4], -0.8, 0.8, 67);
    assert_grad(&[x], |g, v| ds.forward(g, v[0]));

    let gsc = GatedSpatialConv::<f64>::new("gsc", 3, &mut rng);
    let x = uniform_tensor::<f64>(&[1, 3, 4, 4], -0.8, 0.8, 68);
    assert_grad(&[x], |g, v| gsc.forward(g, v[0]));
}

/// FD check through a learnable parameter (a_log), not just the input.
#[test]
fn scan_params_a_log_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let cfg = ScanConfig { state_dim: 2, dt_rank_divisor: 2 };
    let mut sp = ScanParams::<f64>::new("sp", 2, &cfg, &mut rng);
    let x = uniform_tensor::<f64>(&[1, 4, 2], -0.8, 0.8, 72);
    let proj = uniform_tensor::<f64>(&[1, 4, 2], -1.0, 1.0, 73);

    let eval = |sp: &ScanParams<f64>| -> f64 {
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let y = sp.scan(&mut g, xv).unwrap();
        let w = g.constant(proj.clone());
        let p = g.mul(y, w).unwrap();
        let loss = g.sum_all(p).unwrap();
        g.value(loss).item()
    };

    // Analytic gradient of a_log.
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let y = sp.scan(&mut g, xv).unwrap();
    let w = g.constant(proj.clone());
    let p = g.mul(y, w).unwrap();
    let loss = g.sum_all(p).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic = grads.of_param(&sp.a_log).unwrap().clone();

    let base = sp.a_log.value.clone();
    let fd = finite_diff_grad(&base, 1e-5, |probe| {
        sp.a_log.value = probe.clone();
        let v = eval(&sp);
        v
    });
    sp.a_log.value = base;
    assert!(rel_err_tensors(&analytic, &fd) < FD_TOL);
}

// ----------------------------------------------------- traversal properties

#[test]
fn traversal_bijections_compose_to_identity_on_all_small_grids() {
    for h in 1..=16usize {
        for w in 1..=16usize {
            for order in TraversalOrder::ALL {
                let map = order.index_map(h, w);
                let inv = order.inverse_map(h, w);
                for p in 0..h * w {
                    assert_eq!(map[inv[p]], p);
                }
            }
        }
    }
}
