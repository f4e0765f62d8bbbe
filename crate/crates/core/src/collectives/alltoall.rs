use super::{Algorithm, Exchange};
use crate::error::Result;

/// `send_blocks[j]` goes to rank `j`; returns the block received from each
/// rank. Bruck requires every block to have the same size.
pub(super) fn all_to_all(
    ex: &Exchange,
    algo: Algorithm,
    mut send_blocks: Vec<Vec<u8>>,
    recv_bytes: &[usize],
) -> Result<Vec<Vec<u8>>> {
    let (p, r) = (ex.size, ex.rank);
    if algo == Algorithm::Bruck && p > 1 {
        return bruck(ex, send_blocks, recv_bytes[r]);
    }
    let mut out = vec![Vec::new(); p];
    out[r] = std::mem::take(&mut send_blocks[r]);
    match algo {
        Algorithm::Naive => {
            for dst in (0..p).filter(|&d| d != r) {
                let block = std::mem::take(&mut send_blocks[dst]);
                if !block.is_empty() {
                    ex.send(dst, block)?;
                }
            }
            for src in (0..p).filter(|&s| s != r) {
                if recv_bytes[src] > 0 {
                    out[src] = ex.recv(src, recv_bytes[src])?;
                }
            }
            Ok(out)
        }
        _ => {
            for step in 1..p {
                let dst = (r + step) % p;
                let src = (r + p - step) % p;
                let block = std::mem::take(&mut send_blocks[dst]);
                if !block.is_empty() {
                    ex.send(dst, block)?;
                }
                if recv_bytes[src] > 0 {
                    out[src] = ex.recv(src, recv_bytes[src])?;
                }
            }
            Ok(out)
        }
    }
}

fn bruck(ex: &Exchange, mut send_blocks: Vec<Vec<u8>>, block: usize) -> Result<Vec<Vec<u8>>> {
    let (p, r) = (ex.size, ex.rank);
    // tmp[i] holds the block destined for rank r + i.
    let mut tmp: Vec<Vec<u8>> = (0..p).map(|i| std::mem::take(&mut send_blocks[(r + i) % p])).collect();
    if block > 0 {
        let mut k = 1;
        while k < p {
            let idx: Vec<usize> = (0..p).filter(|i| i & k != 0).collect();
            let packed: Vec<u8> = idx.iter().flat_map(|&i| tmp[i].iter().copied()).collect();
            ex.send((r + k) % p, packed)?;
            let incoming = ex.recv((r + p - k) % p, idx.len() * block)?;
            for (n, &i) in idx.iter().enumerate() {
                tmp[i] = incoming[n * block..(n + 1) * block].to_vec();
            }
            k <<= 1;
        }
    }
    // Now tmp[i] holds the block sent by rank r - i.
    Ok((0..p).map(|j| std::mem::take(&mut tmp[(r + p - j) % p])).collect())
}
