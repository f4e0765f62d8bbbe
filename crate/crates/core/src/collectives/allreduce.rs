use super::{rooted, Algorithm, Exchange};
use crate::error::Result;
use crate::types::{reduce_bytes, DType, ReduceOp};

/// Segment `(offset, len)` in elements for the ceil/floor split of `count`
/// into `parts`: the first `count % parts` segments get one extra element.
pub(crate) fn split(count: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = count / parts;
    let extra = count % parts;
    let mut offset = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let seg = (offset, len);
            offset += len;
            seg
        })
        .collect()
}

pub(super) fn all_reduce(
    ex: &Exchange,
    algo: Algorithm,
    dtype: DType,
    op: ReduceOp,
    mut data: Vec<u8>,
) -> Result<Vec<u8>> {
    if ex.size == 1 || data.is_empty() {
        return Ok(data);
    }
    match algo {
        Algorithm::RecursiveDoubling => recursive_doubling(ex, dtype, op, data),
        Algorithm::Naive => naive(ex, dtype, op, data),
        _ => {
            let w = dtype.size_bytes();
            let segs = split(data.len() / w, ex.size);
            ring_reduce_scatter(ex, dtype, op, &mut data, &segs)?;
            ring_allgather(ex, &mut data, &segs, w)?;
            Ok(data)
        }
    }
}

pub(super) fn reduce_scatter(
    ex: &Exchange,
    algo: Algorithm,
    dtype: DType,
    op: ReduceOp,
    mut data: Vec<u8>,
) -> Result<Vec<u8>> {
    let w = dtype.size_bytes();
    let block = data.len() / w / ex.size;
    let (start, end) = (ex.rank * block * w, (ex.rank + 1) * block * w);
    if ex.size == 1 || block == 0 {
        return Ok(data[start..end].to_vec());
    }
    match algo {
        Algorithm::Naive => {
            let full = naive(ex, dtype, op, data)?;
            Ok(full[start..end].to_vec())
        }
        _ => {
            let segs: Vec<_> = (0..ex.size).map(|i| (i * block, block)).collect();
            ring_reduce_scatter(ex, dtype, op, &mut data, &segs)?;
            Ok(data[start..end].to_vec())
        }
    }
}

fn seg_bytes(segs: &[(usize, usize)], i: usize, w: usize) -> std::ops::Range<usize> {
    let (off, len) = segs[i];
    off * w..(off + len) * w
}

/// After this, rank `r` holds the fully reduced segment `r`.
fn ring_reduce_scatter(
    ex: &Exchange,
    dtype: DType,
    op: ReduceOp,
    data: &mut [u8],
    segs: &[(usize, usize)],
) -> Result<()> {
    let (p, r) = (ex.size, ex.rank);
    let w = dtype.size_bytes();
    let next = (r + 1) % p;
    let prev = (r + p - 1) % p;
    for step in 0..p - 1 {
        let send_seg = (r + 2 * p - step - 1) % p;
        let recv_seg = (r + 2 * p - step - 2) % p;
        let send_range = seg_bytes(segs, send_seg, w);
        if !send_range.is_empty() {
            ex.send(next, data[send_range].to_vec())?;
        }
        let recv_range = seg_bytes(segs, recv_seg, w);
        if !recv_range.is_empty() {
            let mut incoming = ex.recv(prev, recv_range.len())?;
            reduce_bytes(dtype, op, &mut incoming, &data[recv_range.clone()]);
            data[recv_range].copy_from_slice(&incoming);
        }
    }
    Ok(())
}

/// Circulate owned segments so every rank ends with all of them.
fn ring_allgather(ex: &Exchange, data: &mut [u8], segs: &[(usize, usize)], w: usize) -> Result<()> {
    let (p, r) = (ex.size, ex.rank);
    let next = (r + 1) % p;
    let prev = (r + p - 1) % p;
    for step in 0..p - 1 {
        let send_seg = (r + p - step) % p;
        let recv_seg = (r + 2 * p - step - 1) % p;
        let send_range = seg_bytes(segs, send_seg, w);
        if !send_range.is_empty() {
            ex.send(next, data[send_range].to_vec())?;
        }
        let recv_range = seg_bytes(segs, recv_seg, w);
        if !recv_range.is_empty() {
            ex.recv_into(prev, &mut data[recv_range])?;
        }
    }
    Ok(())
}

/// Combine two partials with the lower rank's operand first, so both
/// partners of an exchange compute bit-identical results.
fn combine_ordered(dtype: DType, op: ReduceOp, mine: &mut Vec<u8>, theirs: Vec<u8>, mine_is_lower: bool) {
    if mine_is_lower {
        reduce_bytes(dtype, op, mine, &theirs);
    } else {
        let mut lower = theirs;
        reduce_bytes(dtype, op, &mut lower, mine);
        *mine = lower;
    }
}

fn recursive_doubling(ex: &Exchange, dtype: DType, op: ReduceOp, mut data: Vec<u8>) -> Result<Vec<u8>> {
    let (p, r) = (ex.size, ex.rank);
    let pof2 = 1usize << (usize::BITS - 1 - p.leading_zeros());
    let rem = p - pof2;
    let len = data.len();

    // Fold the excess ranks into their odd neighbours.
    let new_rank = if r < 2 * rem {
        if r % 2 == 0 {
            ex.send(r + 1, data.clone())?;
            None
        } else {
            let theirs = ex.recv(r - 1, len)?;
            combine_ordered(dtype, op, &mut data, theirs, false);
            Some(r / 2)
        }
    } else {
        Some(r - rem)
    };

    if let Some(nr) = new_rank {
        let mut mask = 1;
        while mask < pof2 {
            let partner_nr = nr ^ mask;
            let partner = if partner_nr < rem {
                partner_nr * 2 + 1
            } else {
                partner_nr + rem
            };
            ex.send(partner, data.clone())?;
            let theirs = ex.recv(partner, len)?;
            combine_ordered(dtype, op, &mut data, theirs, r < partner);
            mask <<= 1;
        }
    }

    if r < 2 * rem {
        if r % 2 == 1 {
            ex.send(r - 1, data.clone())?;
        } else {
            data = ex.recv(r + 1, len)?;
        }
    }
    Ok(data)
}

fn naive(ex: &Exchange, dtype: DType, op: ReduceOp, data: Vec<u8>) -> Result<Vec<u8>> {
    let len = data.len();
    let reduced = rooted::reduce(ex, Algorithm::Linear, dtype, op, 0, data)?;
    let buf = reduced.unwrap_or_else(|| vec![0; len]);
    rooted::bcast(ex, Algorithm::Linear, 0, buf)
}
