//! Canonical Huffman coding over 16-bit integer symbols.
//!
//! Stream layout (little-endian):
//!
//! ```text
//! u32            number of distinct symbols m
//! m x (u16, u8)  (symbol, code length), ascending symbol order
//! u64            payload length in bits
//! bytes          payload, MSB-first, zero padded
//! ```
//!
//! A stream with a single distinct symbol uses code length 0 and an empty
//! payload.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bitio::{BitReader, BitWriter, ByteReader};
use crate::error::{Error, Result};

const MAX_CODE_LEN: u8 = 32;
const ALPHABET: usize = 1 << 16;

/// Code lengths for `(symbol, frequency)` pairs given in ascending symbol order.
fn code_lengths(freqs: &[(u16, u64)]) -> Vec<u8> {
    if freqs.len() == 1 {
        return vec![0];
    }
    let mut weights: Vec<u64> = freqs.iter().map(|&(_, f)| f).collect();
    loop {
        let lengths = tree_depths(&weights);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
            return lengths;
        }
        for w in &mut weights {
            *w = (*w + 1) / 2;
        }
    }
}

fn tree_depths(weights: &[u64]) -> Vec<u8> {
    let m = weights.len();
    let mut parent = vec![usize::MAX; 2 * m - 1];
    // Ties break on node id, leaves before internal nodes, so trees are
    // reproducible.
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        weights.iter().enumerate().map(|(i, &w)| Reverse((w, i))).collect();
    let mut next = m;
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((wa + wb, next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u8; 2 * m - 1];
    for node in (0..root).rev() {
        depth[node] = depth[parent[node]].saturating_add(1);
    }
    depth.truncate(m);
    depth
}

/// Canonical codes for symbols with the given lengths. Returns codes in the
/// same order as the input.
fn canonical_codes(lengths: &[(u16, u8)]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i].1, lengths[i].0));
    let mut codes = vec![0u64; lengths.len()];
    let mut code = 0u64;
    let mut prev_len = 0u8;
    for (rank, &i) in order.iter().enumerate() {
        let len = lengths[i].1;
        if rank > 0 {
            code += 1;
        }
        code <<= len - prev_len;
        prev_len = len;
        codes[i] = code;
    }
    codes
}

pub fn encode(symbols: &[u16], out: &mut Vec<u8>) {
    let mut counts = vec![0u64; ALPHABET];
    for &s in symbols {
        counts[s as usize] += 1;
    }
    let freqs: Vec<(u16, u64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| (s as u16, c))
        .collect();
    let lengths = code_lengths(&freqs);
    let table: Vec<(u16, u8)> = freqs.iter().map(|&(s, _)| s).zip(lengths).collect();
    let codes = canonical_codes(&table);

    let mut lookup = vec![(0u64, 0u8); ALPHABET];
    for (&(s, len), &code) in table.iter().zip(&codes) {
        lookup[s as usize] = (code, len);
    }

    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for &(s, len) in &table {
        out.extend_from_slice(&s.to_le_bytes());
        out.push(len);
    }
    let total_bits: u64 = symbols.iter().map(|&s| lookup[s as usize].1 as u64).sum();
    let mut w = BitWriter::with_capacity((total_bits as usize).div_ceil(8));
    for &s in symbols {
        let (code, len) = lookup[s as usize];
        w.write(code, len as u32);
    }
    out.extend_from_slice(&total_bits.to_le_bytes());
    out.extend_from_slice(&w.finish());
}

pub fn decode(r: &mut ByteReader<'_>, count: usize) -> Result<Vec<u16>> {
    let m = r.u32()? as usize;
    if m == 0 || m > ALPHABET {
        return Err(Error::corrupted(format!("invalid Huffman table size {m}")));
    }
    let mut table = Vec::with_capacity(m);
    let mut prev: Option<u16> = None;
    for _ in 0..m {
        let s = r.u16()?;
        let len = r.u8()?;
        if prev.is_some_and(|p| p >= s) {
            return Err(Error::corrupted("Huffman symbols out of order"));
        }
        prev = Some(s);
        table.push((s, len));
    }
    let nbits = r.u64()?;
    let nbytes = usize::try_from(nbits.div_ceil(8))
        .map_err(|_| Error::corrupted("Huffman payload too large"))?;
    let payload = r.take(nbytes)?;

    if m == 1 {
        if table[0].1 != 0 || nbits != 0 {
            return Err(Error::corrupted("single-symbol Huffman stream must be empty"));
        }
        return Ok(vec![table[0].0; count]);
    }

    // Kraft equality holds for every complete prefix code.
    let mut kraft: u128 = 0;
    for &(_, len) in &table {
        if len == 0 || len > MAX_CODE_LEN {
            return Err(Error::corrupted(format!("invalid Huffman code length {len}")));
        }
        kraft += 1u128 << (MAX_CODE_LEN - len);
    }
    if kraft != 1u128 << MAX_CODE_LEN {
        return Err(Error::corrupted("Huffman code lengths are not a complete code"));
    }

    let mut sorted = table.clone();
    sorted.sort_by_key(|&(s, len)| (len, s));
    let max_len = sorted.last().unwrap().1 as usize;
    let mut count_per_len = vec![0u64; max_len + 1];
    for &(_, len) in &sorted {
        count_per_len[len as usize] += 1;
    }
    let mut first_code = vec![0u64; max_len + 1];
    let mut first_index = vec![0usize; max_len + 1];
    let mut code = 0u64;
    let mut index = 0usize;
    for len in 1..=max_len {
        code <<= 1;
        first_code[len] = code;
        first_index[len] = index;
        code += count_per_len[len];
        index += count_per_len[len] as usize;
    }

    let mut bits = BitReader::new(payload);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            code = (code << 1) | bits.read_bit()? as u64;
            len += 1;
            if len > max_len {
                return Err(Error::corrupted("invalid Huffman code"));
            }
            let offset = code.wrapping_sub(first_code[len]);
            if code >= first_code[len] && offset < count_per_len[len] {
                out.push(sorted[first_index[len] + offset as usize].0);
                break;
            }
        }
    }
    if bits.bits_consumed() as u64 != nbits {
        return Err(Error::corrupted("Huffman payload length mismatch"));
    }
    Ok(out)
}
