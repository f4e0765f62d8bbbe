use super::{rooted, Algorithm, Exchange};
use crate::error::Result;

/// Every rank contributes `counts[rank]` elements; returns all blocks in
/// rank order.
pub(super) fn all_gatherv(
    ex: &Exchange,
    algo: Algorithm,
    input: Vec<u8>,
    counts: &[usize],
    width: usize,
) -> Result<Vec<Vec<u8>>> {
    let (p, r) = (ex.size, ex.rank);
    let bytes: Vec<usize> = counts.iter().map(|c| c * width).collect();
    if p == 1 {
        return Ok(vec![input]);
    }
    match algo {
        Algorithm::Bruck => bruck(ex, input, &bytes),
        Algorithm::Naive => {
            let gathered = rooted::gather(ex, Algorithm::Linear, 0, &input, counts, width)?;
            let total: usize = bytes.iter().sum();
            let packed = match gathered {
                Some(blocks) => blocks.concat(),
                None => vec![0; total],
            };
            let packed = rooted::bcast(ex, Algorithm::Linear, 0, packed)?;
            let mut off = 0;
            Ok(bytes
                .iter()
                .map(|&b| {
                    let block = packed[off..off + b].to_vec();
                    off += b;
                    block
                })
                .collect())
        }
        _ => {
            let next = (r + 1) % p;
            let prev = (r + p - 1) % p;
            let mut blocks = vec![Vec::new(); p];
            blocks[r] = input;
            for step in 0..p - 1 {
                let send = (r + p - step) % p;
                let recv = (r + 2 * p - step - 1) % p;
                if !blocks[send].is_empty() {
                    ex.send(next, blocks[send].clone())?;
                }
                if bytes[recv] > 0 {
                    blocks[recv] = ex.recv(prev, bytes[recv])?;
                }
            }
            Ok(blocks)
        }
    }
}

/// Bruck's algorithm: after the round with distance `k`, rank `r` holds
/// the blocks of ranks `r..r + 2k` (mod p).
fn bruck(ex: &Exchange, input: Vec<u8>, bytes: &[usize]) -> Result<Vec<Vec<u8>>> {
    let (p, r) = (ex.size, ex.rank);
    let mut held = vec![input];
    let mut k = 1;
    while k < p {
        let n = k.min(p - k);
        let dst = (r + p - k) % p;
        let src = (r + k) % p;
        let packed: Vec<u8> = held[..n].concat();
        if !packed.is_empty() {
            ex.send(dst, packed)?;
        }
        let sizes: Vec<usize> = (0..n).map(|i| bytes[(src + i) % p]).collect();
        let total: usize = sizes.iter().sum();
        let incoming = if total > 0 { ex.recv(src, total)? } else { Vec::new() };
        let mut off = 0;
        for s in sizes {
            held.push(incoming[off..off + s].to_vec());
            off += s;
        }
        k <<= 1;
    }
    let mut blocks = vec![Vec::new(); p];
    for (i, block) in held.into_iter().enumerate() {
        blocks[(r + i) % p] = block;
    }
    Ok(blocks)
}
