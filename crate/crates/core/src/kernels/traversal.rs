//! Grid traversal orders: bijections between 2-D grid positions and
//! sequence positions, used by the multi-directional scans.

use crate::error::Result;
use crate::tensor::{Graph, Scalar, Var};
use std::sync::Arc;

/// The four scan directions over an H x W grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraversalOrder {
    RowMajorForward,
    RowMajorBackward,
    ColMajorForward,
    ColMajorBackward,
}

impl TraversalOrder {
    pub const ALL: [TraversalOrder; 4] = [
        TraversalOrder::RowMajorForward,
        TraversalOrder::ColMajorForward,
        TraversalOrder::RowMajorBackward,
        TraversalOrder::ColMajorBackward,
    ];

    /// Alternation cycle used by blocks whose direction changes with index.
    pub fn cycle(index: usize) -> TraversalOrder {
        Self::ALL[index % 4]
    }

    /// map[t] = flat grid position (row * w + col) visited at sequence step t.
    pub fn index_map(&self, h: usize, w: usize) -> Vec<usize> {
        let l = h * w;
        match self {
            TraversalOrder::RowMajorForward => (0..l).collect(),
            TraversalOrder::RowMajorBackward => (0..l).rev().collect(),
            TraversalOrder::ColMajorForward => {
                (0..l).map(|t| (t % h) * w + t / h).collect()
            }
            TraversalOrder::ColMajorBackward => {
                (0..l).map(|t| (t % h) * w + t / h).rev().collect()
            }
        }
    }

    /// inv[p] = sequence step at which grid position p is visited.
    pub fn inverse_map(&self, h: usize, w: usize) -> Vec<usize> {
        let map = self.index_map(h, w);
        let mut inv = vec![0usize; map.len()];
        for (t, &p) in map.iter().enumerate() {
            inv[p] = t;
        }
        inv
    }
}

/// Flatten (B, C, H, W) into (B, L, C) visiting the grid in `order`.
pub fn grid_to_seq<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    order: TraversalOrder,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let flat = g.reshape(x, &[b, c, h * w])?;
    let seq = g.permute(flat, &[0, 2, 1])?; // (B, L, C), row-major
    if order == TraversalOrder::RowMajorForward {
        return Ok(seq);
    }
    g.seq_permute(seq, Arc::new(order.index_map(h, w)))
}

/// Inverse of [`grid_to_seq`]: (B, L, C) back to (B, C, H, W).
pub fn seq_to_grid<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    order: TraversalOrder,
    h: usize,
    w: usize,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, _l, c) = (s[0], s[1], s[2]);
    let restored = if order == TraversalOrder::RowMajorForward {
        x
    } else {
        g.seq_permute(x, Arc::new(order.inverse_map(h, w)))?
    };
    let back = g.permute(restored, &[0, 2, 1])?;
    g.reshape(back, &[b, c, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn order_then_inverse_is_identity_for_all_directions() {
        for h in 1..=16usize {
            for w in 1..=16usize {
                for order in TraversalOrder::ALL {
                    let map = order.index_map(h, w);
                    let inv = order.inverse_map(h, w);
                    let mut seen = vec![false; h * w];
                    for &p in &map {
                        assert!(!seen[p], "{order:?} not a bijection at {h}x{w}");
                        seen[p] = true;
                    }
                    for t in 0..h * w {
                        assert_eq!(inv[map[t]], t);
                    }
                }
            }
        }
    }

    #[test]
    fn col_major_visits_columns_first() {
        let map = TraversalOrder::ColMajorForward.index_map(2, 3);
        // grid positions: (0,0),(1,0),(0,1),(1,1),(0,2),(1,2)
        assert_eq!(map, vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn grid_seq_round_trip() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 5, 7], |i| i as f64));
        for order in TraversalOrder::ALL {
            let seq = grid_to_seq(&mut g, x, order).unwrap();
            assert_eq!(g.shape(seq), &[2, 35, 3]);
            let back = seq_to_grid(&mut g, seq, order, 5, 7).unwrap();
            assert_eq!(g.value(back).data(), g.value(x).data());
        }
    }
}
