//! Rooted collectives: reduce, broadcast, gather and scatter, each as a
//! binomial tree or a linear fan-in/fan-out at the root.

use super::{Algorithm, Exchange};
use crate::error::Result;
use crate::types::{reduce_bytes, DType, ReduceOp};

fn real(vrank: usize, root: usize, p: usize) -> usize {
    (vrank + root) % p
}

fn lowest_set_bit_or(vrank: usize, p: usize) -> usize {
    if vrank == 0 {
        p.next_power_of_two()
    } else {
        1 << vrank.trailing_zeros()
    }
}

/// Returns the reduced data at the root and `None` elsewhere.
pub(super) fn reduce(
    ex: &Exchange,
    algo: Algorithm,
    dtype: DType,
    op: ReduceOp,
    root: usize,
    mut data: Vec<u8>,
) -> Result<Option<Vec<u8>>> {
    let (p, r) = (ex.size, ex.rank);
    let len = data.len();
    if p == 1 {
        return Ok(Some(data));
    }
    if len == 0 {
        return Ok((r == root).then_some(data));
    }
    match algo {
        Algorithm::BinomialTree => {
            let vr = (r + p - root) % p;
            let mut mask = 1;
            while mask < p {
                if vr & mask != 0 {
                    ex.send(real(vr - mask, root, p), data)?;
                    return Ok(None);
                }
                if vr + mask < p {
                    let theirs = ex.recv(real(vr + mask, root, p), len)?;
                    reduce_bytes(dtype, op, &mut data, &theirs);
                }
                mask <<= 1;
            }
            Ok(Some(data))
        }
        _ => {
            if r != root {
                ex.send(root, data)?;
                return Ok(None);
            }
            // Combine strictly in rank order.
            let mut acc: Option<Vec<u8>> = None;
            let mut own = Some(data);
            for src in 0..p {
                let contribution = if src == root {
                    own.take().unwrap()
                } else {
                    ex.recv(src, len)?
                };
                match acc.as_mut() {
                    None => acc = Some(contribution),
                    Some(a) => reduce_bytes(dtype, op, a, &contribution),
                }
            }
            Ok(acc)
        }
    }
}

/// Every rank returns the root's data. Non-root `data` only fixes the length.
pub(super) fn bcast(ex: &Exchange, algo: Algorithm, root: usize, mut data: Vec<u8>) -> Result<Vec<u8>> {
    let (p, r) = (ex.size, ex.rank);
    let len = data.len();
    if p == 1 || len == 0 {
        return Ok(data);
    }
    match algo {
        Algorithm::BinomialTree => {
            let vr = (r + p - root) % p;
            let mut mask = lowest_set_bit_or(vr, p);
            if vr != 0 {
                data = ex.recv(real(vr - mask, root, p), len)?;
            }
            mask >>= 1;
            while mask > 0 {
                if vr + mask < p {
                    ex.send(real(vr + mask, root, p), data.clone())?;
                }
                mask >>= 1;
            }
            Ok(data)
        }
        _ => {
            if r == root {
                for dst in (0..p).filter(|&d| d != root) {
                    ex.send(dst, data.clone())?;
                }
                Ok(data)
            } else {
                ex.recv(root, len)
            }
        }
    }
}

/// Gather per-rank blocks of `counts[j]` elements to the root, returning
/// the blocks in rank order at the root.
pub(super) fn gather(
    ex: &Exchange,
    algo: Algorithm,
    root: usize,
    input: &[u8],
    counts: &[usize],
    width: usize,
) -> Result<Option<Vec<Vec<u8>>>> {
    let (p, r) = (ex.size, ex.rank);
    let bytes: Vec<usize> = counts.iter().map(|c| c * width).collect();
    match algo {
        Algorithm::BinomialTree => {
            let vr = (r + p - root) % p;
            // Blocks for vranks [vr, vr + held.len()).
            let mut held: Vec<Vec<u8>> = vec![input.to_vec()];
            let mut mask = 1;
            while mask < p {
                if vr & mask != 0 {
                    let packed: Vec<u8> = held.concat();
                    if !packed.is_empty() {
                        ex.send(real(vr - mask, root, p), packed)?;
                    }
                    return Ok(None);
                }
                let child = vr + mask;
                if child < p {
                    let n = mask.min(p - child);
                    let sizes: Vec<usize> = (child..child + n).map(|v| bytes[real(v, root, p)]).collect();
                    let total: usize = sizes.iter().sum();
                    let packed = if total > 0 {
                        ex.recv(real(child, root, p), total)?
                    } else {
                        Vec::new()
                    };
                    let mut off = 0;
                    for s in sizes {
                        held.push(packed[off..off + s].to_vec());
                        off += s;
                    }
                }
                mask <<= 1;
            }
            let mut blocks = vec![Vec::new(); p];
            for (v, block) in held.into_iter().enumerate() {
                blocks[real(v, root, p)] = block;
            }
            Ok(Some(blocks))
        }
        _ => {
            if r != root {
                if !input.is_empty() {
                    ex.send(root, input.to_vec())?;
                }
                return Ok(None);
            }
            let mut blocks = Vec::with_capacity(p);
            for (src, &len) in bytes.iter().enumerate() {
                if src == root {
                    blocks.push(input.to_vec());
                } else if len == 0 {
                    blocks.push(Vec::new());
                } else {
                    blocks.push(ex.recv(src, len)?);
                }
            }
            Ok(Some(blocks))
        }
    }
}

/// Scatter the root's `blocks` (rank order); every rank returns its block.
pub(super) fn scatter(
    ex: &Exchange,
    algo: Algorithm,
    root: usize,
    blocks: Option<Vec<Vec<u8>>>,
    counts: &[usize],
    width: usize,
) -> Result<Vec<u8>> {
    let (p, r) = (ex.size, ex.rank);
    let bytes: Vec<usize> = counts.iter().map(|c| c * width).collect();
    match algo {
        Algorithm::BinomialTree => {
            let vr = (r + p - root) % p;
            let mut mask = lowest_set_bit_or(vr, p);
            // Blocks for vranks [vr, vr + held.len()).
            let mut held: Vec<Vec<u8>> = if vr == 0 {
                let mut blocks = blocks.expect("root holds the scatter input");
                (0..p).map(|v| std::mem::take(&mut blocks[real(v, root, p)])).collect()
            } else {
                let n = mask.min(p - vr);
                let sizes: Vec<usize> = (vr..vr + n).map(|v| bytes[real(v, root, p)]).collect();
                let total: usize = sizes.iter().sum();
                let packed = if total > 0 {
                    ex.recv(real(vr - mask, root, p), total)?
                } else {
                    Vec::new()
                };
                let mut off = 0;
                sizes
                    .into_iter()
                    .map(|s| {
                        let b = packed[off..off + s].to_vec();
                        off += s;
                        b
                    })
                    .collect()
            };
            mask >>= 1;
            while mask > 0 {
                if vr + mask < p {
                    let end = (2 * mask).min(held.len());
                    let packed: Vec<u8> = held[mask..end].concat();
                    if !packed.is_empty() {
                        ex.send(real(vr + mask, root, p), packed)?;
                    }
                    held.truncate(mask);
                }
                mask >>= 1;
            }
            Ok(held.swap_remove(0))
        }
        _ => {
            if r == root {
                let mut blocks = blocks.expect("root holds the scatter input");
                for dst in (0..p).filter(|&d| d != root) {
                    if !blocks[dst].is_empty() {
                        ex.send(dst, std::mem::take(&mut blocks[dst]))?;
                    }
                }
                Ok(std::mem::take(&mut blocks[root]))
            } else if bytes[r] == 0 {
                Ok(Vec::new())
            } else {
                ex.recv(root, bytes[r])
            }
        }
    }
}
