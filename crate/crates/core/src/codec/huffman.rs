//! Canonical Huffman coding of 16-bit symbol streams.
//!
//! Stream layout (little-endian): symbol count `u32`, alphabet size `u32`,
//! then `(symbol u16, code length u8)` pairs in canonical order, then the
//! payload length in bytes `u32` followed by the MSB-first bit payload.
//! A single-symbol alphabet uses a 1-bit code.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::bytes::{ByteReader, ByteWriter};
use super::CodecError;

const MAX_CODE_LEN: u8 = 24;

/// Code lengths for each symbol, limited to [`MAX_CODE_LEN`].
fn code_lengths(freqs: &BTreeMap<u16, u64>) -> Vec<(u16, u8)> {
    if freqs.len() == 1 {
        let (&sym, _) = freqs.iter().next().unwrap();
        return vec![(sym, 1)];
    }
    let mut weights: Vec<(u16, u64)> = freqs.iter().map(|(&s, &f)| (s, f)).collect();
    loop {
        let lengths = build_lengths(&weights);
        if lengths.iter().all(|&(_, l)| l <= MAX_CODE_LEN) {
            return lengths;
        }
        // Flatten the distribution and retry; converges once all weights are 1.
        for w in &mut weights {
            w.1 = (w.1 / 2).max(1);
        }
    }
}

fn build_lengths(weights: &[(u16, u64)]) -> Vec<(u16, u8)> {
    // Node arena: leaves first, then internal nodes. Ties resolve on node
    // index so the tree is deterministic.
    let mut parent: Vec<usize> = vec![usize::MAX; weights.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        weights.iter().enumerate().map(|(i, &(_, w))| Reverse((w, i))).collect();
    while heap.len() > 1 {
        let Reverse((wa, a)) = heap.pop().unwrap();
        let Reverse((wb, b)) = heap.pop().unwrap();
        let node = parent.len();
        parent.push(usize::MAX);
        parent[a] = node;
        parent[b] = node;
        heap.push(Reverse((wa + wb, node)));
    }
    weights
        .iter()
        .enumerate()
        .map(|(i, &(sym, _))| {
            let mut depth = 0u32;
            let mut n = i;
            while parent[n] != usize::MAX {
                n = parent[n];
                depth += 1;
            }
            (sym, depth.min(u8::MAX as u32) as u8)
        })
        .collect()
}

/// Sorts `(symbol, length)` pairs canonically and assigns codes.
fn canonical_codes(mut lengths: Vec<(u16, u8)>) -> Vec<(u16, u8, u32)> {
    lengths.sort_by_key(|&(sym, len)| (len, sym));
    let mut out = Vec::with_capacity(lengths.len());
    let mut code = 0u32;
    let mut prev_len = lengths.first().map(|&(_, l)| l).unwrap_or(0);
    for (sym, len) in lengths {
        code <<= len - prev_len;
        out.push((sym, len, code));
        code += 1;
        prev_len = len;
    }
    out
}

pub fn huffman_encode(symbols: &[u16]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    encode_into(&mut w, symbols);
    w.into_inner()
}

pub(crate) fn encode_into(w: &mut ByteWriter, symbols: &[u16]) {
    w.u32(symbols.len() as u32);
    if symbols.is_empty() {
        w.u32(0);
        w.u32(0);
        return;
    }
    let mut freqs: BTreeMap<u16, u64> = BTreeMap::new();
    for &s in symbols {
        *freqs.entry(s).or_default() += 1;
    }
    let table = canonical_codes(code_lengths(&freqs));
    w.u32(table.len() as u32);
    let mut lookup: BTreeMap<u16, (u8, u32)> = BTreeMap::new();
    for &(sym, len, code) in &table {
        w.u16(sym);
        w.u8(len);
        lookup.insert(sym, (len, code));
    }

    let mut payload = Vec::new();
    let mut acc = 0u64;
    let mut nbits = 0u32;
    for s in symbols {
        let (len, code) = lookup[s];
        acc = (acc << len) | code as u64;
        nbits += len as u32;
        while nbits >= 8 {
            nbits -= 8;
            payload.push((acc >> nbits) as u8);
        }
        acc &= (1u64 << nbits) - 1;
    }
    if nbits > 0 {
        payload.push((acc << (8 - nbits)) as u8);
    }
    w.u32(payload.len() as u32);
    w.bytes(&payload);
}

pub fn huffman_decode(bytes: &[u8]) -> Result<Vec<u16>, CodecError> {
    let mut r = ByteReader::new(bytes);
    decode_from(&mut r)
}

pub(crate) fn decode_from(r: &mut ByteReader<'_>) -> Result<Vec<u16>, CodecError> {
    let count = r.u32()? as usize;
    let alphabet = r.u32()? as usize;
    if count > 0 && alphabet == 0 {
        return Err(r.corrupt("huffman stream with symbols but empty alphabet"));
    }
    let mut table = Vec::with_capacity(alphabet.min(1 << 16));
    for _ in 0..alphabet {
        let sym = r.u16()?;
        let len = r.u8()?;
        if len == 0 || len > MAX_CODE_LEN {
            return Err(r.corrupt(format!("invalid huffman code length {len}")));
        }
        table.push((sym, len));
    }
    if table.windows(2).any(|w| (w[0].1, w[0].0) >= (w[1].1, w[1].0)) {
        return Err(r.corrupt("huffman table not in canonical order"));
    }

    // Canonical decode tables: first code and symbol offset per length.
    let max_len = table.last().map(|&(_, l)| l as usize).unwrap_or(0);
    let mut count_by_len = vec![0u32; max_len + 1];
    for &(_, l) in &table {
        count_by_len[l as usize] += 1;
    }
    let mut first_code = vec![0u32; max_len + 2];
    let mut first_index = vec![0usize; max_len + 2];
    let mut code = 0u32;
    let mut index = 0usize;
    for len in 1..=max_len {
        code <<= 1;
        first_code[len] = code;
        first_index[len] = index;
        code += count_by_len[len];
        index += count_by_len[len] as usize;
        if code > (1u32 << len) {
            return Err(r.corrupt("over-subscribed huffman code lengths"));
        }
    }

    let payload_len = r.u32()? as usize;
    let payload_start = r.offset();
    let payload = r.take(payload_len)?;
    let mut out = Vec::with_capacity(count.min(payload_len * 8 + 1));
    let mut bit = 0usize;
    let total_bits = payload_len * 8;
    while out.len() < count {
        let mut code = 0u32;
        let mut len = 0usize;
        loop {
            if bit >= total_bits {
                return Err(CodecError::Corrupt {
                    offset: payload_start + payload_len,
                    what: "huffman payload ended mid-symbol".into(),
                });
            }
            code = (code << 1) | ((payload[bit / 8] >> (7 - bit % 8)) & 1) as u32;
            bit += 1;
            len += 1;
            if len > max_len {
                return Err(CodecError::Corrupt {
                    offset: payload_start + bit / 8,
                    what: "invalid huffman code".into(),
                });
            }
            let offset = code.wrapping_sub(first_code[len]);
            if code >= first_code[len] && offset < count_by_len[len] {
                out.push(table[first_index[len] + offset as usize].0);
                break;
            }
        }
    }
    Ok(out)
}
