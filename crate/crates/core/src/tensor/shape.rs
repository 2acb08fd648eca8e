//! Shape arithmetic shared by every op: strides, broadcasting, index math.

use crate::error::{Error, Result};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn fmt_shape(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join(", "))
}

/// NumPy-style broadcast of two shapes (right-aligned).
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::shape(
                op,
                format!("broadcastable shapes, lhs {}", fmt_shape(a)),
                fmt_shape(b),
            ));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Decompose a flat row-major index into coordinates.
pub fn unravel(mut flat: usize, shape: &[usize], coords: &mut [usize]) {
    for d in (0..shape.len()).rev() {
        coords[d] = flat % shape[d];
        flat /= shape[d];
    }
}

/// Flat row-major index of `coords` in `shape`.
pub fn ravel(coords: &[usize], shape: &[usize]) -> usize {
    let mut flat = 0;
    for d in 0..shape.len() {
        flat = flat * shape[d] + coords[d];
    }
    flat
}

/// Flat index into a tensor of shape `shape` for output coordinates `coords`
/// (right-aligned), treating size-1 dims of `shape` as broadcast.
pub fn ravel_broadcast(coords: &[usize], out_rank: usize, shape: &[usize]) -> usize {
    let offset = out_rank - shape.len();
    let mut flat = 0;
    for d in 0..shape.len() {
        let c = if shape[d] == 1 { 0 } else { coords[offset + d] };
        flat = flat * shape[d] + c;
    }
    flat
}
