//! Multi-head self-attention, dense and windowed (with cyclic shift and
//! learned relative-position bias).

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::{Graph, Param, Parameterized, Scalar, Tensor, Var};
use rand::Rng;
use std::sync::Arc;

/// Shared q/k/v/out projections.
pub struct AttentionWeights<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub heads: usize,
}

impl<T: Scalar> AttentionWeights<T> {
    pub fn new<R: Rng>(name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if dim % heads != 0 {
            return Err(Error::Divisibility {
                what: format!("attention dim {dim}"),
                required: heads,
                got: dim,
            });
        }
        Ok(AttentionWeights {
            q: Linear::new(&format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(&format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(&format!("{name}.v"), dim, dim, true, rng),
            o: Linear::new(&format!("{name}.o"), dim, dim, true, rng),
            heads,
        })
    }

    /// Split (B, L, C) into (B, h, L, C/h).
    fn split_heads(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, l, c) = (s[0], s[1], s[2]);
        let dh = c / self.heads;
        let r = g.reshape(x, &[b, l, self.heads, dh])?;
        g.permute(r, &[0, 2, 1, 3])
    }

    fn merge_heads(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, h, l, dh) = (s[0], s[1], s[2], s[3]);
        let p = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(p, &[b, l, h * dh])
    }

    /// Raw pre-softmax logits (B, h, L, L) scaled by 1/sqrt(d_head).
    fn logits(&self, g: &mut Graph<T>, x: Var) -> Result<(Var, Var)> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, x)?;
        let v = self.v.forward(g, x)?;
        let qh = self.split_heads(g, q)?;
        let kh = self.split_heads(g, k)?;
        let vh = self.split_heads(g, v)?;
        let dh = g.shape(qh)[3];
        let kt = g.permute(kh, &[0, 1, 3, 2])?;
        let raw = g.matmul(qh, kt)?;
        let scaled = g.scale(raw, 1.0 / (dh as f64).sqrt())?;
        Ok((scaled, vh))
    }

    /// Standard scaled dot-product attention over (B, L, C).
    pub fn mhsa(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (logits, vh) = self.logits(g, x)?;
        let attn = g.softmax(logits, 3)?;
        let ctx = g.matmul(attn, vh)?;
        let merged = self.merge_heads(g, ctx)?;
        self.o.forward(g, merged)
    }

    /// Attention with an additive bias/mask on the logits. `bias` must
    /// broadcast against (B, h, L, L) after the caller's reshape convention.
    pub fn mhsa_with_bias(&self, g: &mut Graph<T>, x: Var, bias: Var) -> Result<Var> {
        let (logits, vh) = self.logits(g, x)?;
        let biased = g.add(logits, bias)?;
        let attn = g.softmax(biased, 3)?;
        let ctx = g.matmul(attn, vh)?;
        let merged = self.merge_heads(g, ctx)?;
        self.o.forward(g, merged)
    }
}

impl<T: Scalar> Parameterized<T> for AttentionWeights<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.q.visit(f);
        self.k.visit(f);
        self.v.visit(f);
        self.o.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.q.visit_mut(f);
        self.k.visit_mut(f);
        self.v.visit_mut(f);
        self.o.visit_mut(f);
    }
}

/// Relative-position index table for a w x w window: entry (i, j) indexes
/// into a ((2w-1)^2)-row bias table.
fn relative_position_index(w: usize) -> Vec<usize> {
    let l = w * w;
    let span = 2 * w - 1;
    let mut idx = Vec::with_capacity(l * l);
    for i in 0..l {
        let (r1, c1) = (i / w, i % w);
        for j in 0..l {
            let (r2, c2) = (j / w, j % w);
            let dr = r1 + w - 1 - r2;
            let dc = c1 + w - 1 - c2;
            idx.push(dr * span + dc);
        }
    }
    idx
}

/// Windowed multi-head self-attention with optional cyclic shift, padded
/// internally to a window multiple. Bias table starts at zero so a full
/// window with shift 0 equals dense attention at init.
pub struct WindowAttention<T> {
    pub attn: AttentionWeights<T>,
    pub window: usize,
    pub shift: usize,
    pub bias_table: Param<T>,
    rel_index: Arc<Vec<usize>>,
}

impl<T: Scalar> WindowAttention<T> {
    pub fn new<R: Rng>(
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        shift: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if shift != 0 && shift != window / 2 {
            return Err(Error::InvalidArgument(format!(
                "window shift must be 0 or window/2, got {shift} for window {window}"
            )));
        }
        let span = 2 * window - 1;
        Ok(WindowAttention {
            attn: AttentionWeights::new(&format!("{name}.attn"), dim, heads, rng)?,
            window,
            shift,
            bias_table: Param::new(
                format!("{name}.rel_bias"),
                Tensor::zeros(&[span * span, heads]),
            ),
            rel_index: Arc::new(relative_position_index(window)),
        })
    }

    /// (h, w^2, w^2) bias gathered from the learned table.
    fn bias(&self, g: &mut Graph<T>) -> Result<Var> {
        let l = self.window * self.window;
        let table = g.param(&self.bias_table);
        let rows = g.index_select(table, 0, self.rel_index.clone())?; // (L*L, h)
        let cube = g.reshape(rows, &[l, l, self.attn.heads])?;
        g.permute(cube, &[2, 0, 1])
    }

    /// Mask for shifted windows on an Hp x Wp padded grid: 0 within a
    /// region, -100 across wrapped regions. Shape (nW, 1, L, L), constant.
    fn shift_mask(&self, hp: usize, wp: usize) -> Tensor<T> {
        let w = self.window;
        let s = self.shift;
        let mut region = vec![0f64; hp * wp];
        let mut cnt = 0f64;
        let h_slices = [(0, hp - w), (hp - w, hp - s), (hp - s, hp)];
        let w_slices = [(0, wp - w), (wp - w, wp - s), (wp - s, wp)];
        for &(hs, he) in &h_slices {
            for &(ws, we) in &w_slices {
                for r in hs..he {
                    for c in ws..we {
                        region[r * wp + c] = cnt;
                    }
                }
                cnt += 1.0;
            }
        }
        let (nh, nw) = (hp / w, wp / w);
        let l = w * w;
        let mut mask = Tensor::zeros(&[nh * nw, 1, l, l]);
        for wi in 0..nh * nw {
            let (wr, wc) = (wi / nw, wi % nw);
            for i in 0..l {
                let pi = (wr * w + i / w) * wp + wc * w + i % w;
                for j in 0..l {
                    let pj = (wr * w + j / w) * wp + wc * w + j % w;
                    if region[pi] != region[pj] {
                        mask.set(&[wi, 0, i, j], T::from_f64(-100.0));
                    }
                }
            }
        }
        mask
    }

    /// x: (B, H, W, C) -> (B, H, W, C).
    pub fn forward(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (b, h, wd, c) = (s[0], s[1], s[2], s[3]);
        let w = self.window;

        // Pad to window multiples.
        let hp = h.div_ceil(w) * w;
        let wp = wd.div_ceil(w) * w;
        let mut cur = x;
        if hp != h || wp != wd {
            cur = g.pad(cur, &[(0, 0), (0, hp - h), (0, wp - wd), (0, 0)], 0.0)?;
        }

        // Cyclic shift via slice + concat.
        if self.shift > 0 {
            let top = g.slice(cur, &[(0, b), (self.shift, hp), (0, wp), (0, c)])?;
            let bot = g.slice(cur, &[(0, b), (0, self.shift), (0, wp), (0, c)])?;
            cur = g.concat(&[top, bot], 1)?;
            let left = g.slice(cur, &[(0, b), (0, hp), (self.shift, wp), (0, c)])?;
            let right = g.slice(cur, &[(0, b), (0, hp), (0, self.shift), (0, c)])?;
            cur = g.concat(&[left, right], 2)?;
        }

        // Partition into windows: (B*nW, w*w, C).
        let (nh, nw) = (hp / w, wp / w);
        let r = g.reshape(cur, &[b, nh, w, nw, w, c])?;
        let p = g.permute(r, &[0, 1, 3, 2, 4, 5])?;
        let windows = g.reshape(p, &[b * nh * nw, w * w, c])?;

        // Bias (h, L, L) broadcast over windows; shift mask per window.
        let bias = self.bias(g)?;
        let out = if self.shift > 0 {
            let mask = self.shift_mask(hp, wp);
            let maskv = g.constant(mask);
            let biased = g.add(maskv, bias)?; // (nW, h, L, L)
            // Reshape logits path to see (B, nW, h, L, L): fold nW into bias
            // by tiling windows across batch outer dim. Our logits are
            // (B*nW, h, L, L); tile the mask B times along dim 0.
            let tiled = {
                let parts: Vec<Var> = (0..b).map(|_| biased).collect();
                g.concat(&parts, 0)?
            };
            self.attn.mhsa_with_bias(g, windows, tiled)?
        } else {
            self.attn.mhsa_with_bias(g, windows, bias)?
        };

        // Merge windows back.
        let r = g.reshape(out, &[b, nh, nw, w, w, c])?;
        let p = g.permute(r, &[0, 1, 3, 2, 4, 5])?;
        let mut merged = g.reshape(p, &[b, hp, wp, c])?;

        // Inverse shift.
        if self.shift > 0 {
            let cut = hp - self.shift;
            let top = g.slice(merged, &[(0, b), (cut, hp), (0, wp), (0, c)])?;
            let bot = g.slice(merged, &[(0, b), (0, cut), (0, wp), (0, c)])?;
            merged = g.concat(&[top, bot], 1)?;
            let cutw = wp - self.shift;
            let left = g.slice(merged, &[(0, b), (0, hp), (cutw, wp), (0, c)])?;
            let right = g.slice(merged, &[(0, b), (0, hp), (0, cutw), (0, c)])?;
            merged = g.concat(&[left, right], 2)?;
        }

        // Drop padding.
        if hp != h || wp != wd {
            merged = g.slice(merged, &[(0, b), (0, h), (0, wd), (0, c)])?;
        }
        Ok(merged)
    }
}

impl<T: Scalar> Parameterized<T> for WindowAttention<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.attn.visit(f);
        f(&self.bias_table);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.attn.visit_mut(f);
        f(&mut self.bias_table);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testdata::uniform_tensor;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_token_attention_is_projection_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let aw = AttentionWeights::<f64>::new("a", 6, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(uniform_tensor(&[1, 1, 6], -1.0, 1.0, 1));
        let y = aw.mhsa(&mut g, x).unwrap();
        // With L = 1 attention weight is 1, so y = o(v(x)).
        let v = aw.v.forward(&mut g, x).unwrap();
        let expect = aw.o.forward(&mut g, v).unwrap();
        for i in 0..6 {
            assert!(
                (g.value(y).at(&[0, 0, i]) - g.value(expect).at(&[0, 0, i])).abs() < 1e-12
            );
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let aw = AttentionWeights::<f64>::new("a", 4, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(uniform_tensor(&[2, 5, 4], -1.0, 1.0, 2));
        let (logits, _) = aw.logits(&mut g, x).unwrap();
        let attn = g.softmax(logits, 3).unwrap();
        let t = g.value(attn);
        for b in 0..2 {
            for h in 0..2 {
                for i in 0..5 {
                    let s: f64 = (0..5).map(|j| t.at(&[b, h, i, j])).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!(AttentionWeights::<f64>::new("a", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn cyclic_shift_round_trip_is_identity() {
        // shift 0 window attention on an 8x8x4 map, then compare the
        // shift/unshift plumbing directly via slices.
        let mut g = Graph::<f64>::new();
        let x = g.constant(uniform_tensor(&[1, 8, 8, 4], -1.0, 1.0, 3));
        let s = 2usize;
        let (b, h, w, c) = (1, 8, 8, 4);
        let top = g.slice(x, &[(0, b), (s, h), (0, w), (0, c)]).unwrap();
        let bot = g.slice(x, &[(0, b), (0, s), (0, w), (0, c)]).unwrap();
        let shifted = g.concat(&[top, bot], 1).unwrap();
        let cut = h - s;
        let t2 = g.slice(shifted, &[(0, b), (cut, h), (0, w), (0, c)]).unwrap();
        let b2 = g.slice(shifted, &[(0, b), (0, cut), (0, w), (0, c)]).unwrap();
        let back = g.concat(&[t2, b2], 1).unwrap();
        assert_eq!(g.value(back).data(), g.value(x).data());
    }
}
