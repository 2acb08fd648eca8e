//! Deterministic work splitting. Output buffers are cut into disjoint
//! per-item blocks and each block is computed by exactly one thread with a
//! fixed per-element accumulation order, so results are bit-identical to the
//! serial run for any thread count.

/// Split `out` into consecutive blocks of `block` elements and run
/// `f(block_index, block_slice)` for each, distributing blocks over up to
/// `threads` OS threads.
pub(crate) fn par_blocks<T, F>(out: &mut [T], block: usize, threads: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert_eq!(out.len() % block.max(1), 0);
    let n_blocks = if block == 0 { 0 } else { out.len() / block };
    if threads <= 1 || n_blocks < 2 {
        for (i, b) in out.chunks_mut(block.max(1)).enumerate() {
            f(i, b);
        }
        return;
    }
    let t = threads.min(n_blocks);
    let per = n_blocks.div_ceil(t);
    let f = &f;
    std::thread::scope(|scope| {
        let mut rest = out;
        let mut start = 0usize;
        while !rest.is_empty() {
            let take = per.min(rest.len() / block);
            let (head, tail) = rest.split_at_mut(take * block);
            rest = tail;
            let base = start;
            scope.spawn(move || {
                for (i, b) in head.chunks_mut(block).enumerate() {
                    f(base + i, b);
                }
            });
            start += take;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_serial() {
        let n = 17;
        let block = 5;
        let mut serial = vec![0u64; n * block];
        par_blocks(&mut serial, block, 1, |i, b| {
            for (j, v) in b.iter_mut().enumerate() {
                *v = (i * 1000 + j) as u64;
            }
        });
        let mut parallel = vec![0u64; n * block];
        par_blocks(&mut parallel, block, 4, |i, b| {
            for (j, v) in b.iter_mut().enumerate() {
                *v = (i * 1000 + j) as u64;
            }
        });
        assert_eq!(serial, parallel);
    }
}
