//! Canonical Huffman codes built per image.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use super::bits::{BitReader, BitWriter};
use crate::error::{Error, Result};

pub(crate) const MAX_CODE_LEN: u8 = 24;

/// Code lengths per symbol; codes are assigned canonically from these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    /// `(symbol, length)` sorted by length then symbol.
    entries: Vec<(u16, u8)>,
}

impl HuffmanTable {
    /// Optimal lengths for `freqs`, limited to [`MAX_CODE_LEN`] by repeatedly
    /// flattening the counts. A lone symbol gets a 1-bit code.
    pub fn from_frequencies(freqs: &BTreeMap<u16, u64>) -> Self {
        let mut counts: Vec<(u16, u64)> = freqs.iter().filter(|(_, &f)| f > 0).map(|(&s, &f)| (s, f)).collect();
        match counts.len() {
            0 => return HuffmanTable { entries: Vec::new() },
            1 => {
                return HuffmanTable {
                    entries: vec![(counts[0].0, 1)],
                }
            }
            _ => {}
        }
        loop {
            let lengths = code_lengths(&counts);
            if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
                let mut entries: Vec<(u16, u8)> = counts.iter().map(|c| c.0).zip(lengths).collect();
                entries.sort_by_key(|&(s, l)| (l, s));
                return HuffmanTable { entries };
            }
            for c in &mut counts {
                c.1 = c.1.div_ceil(2);
            }
        }
    }

    pub fn from_entries(mut entries: Vec<(u16, u8)>) -> Result<Self> {
        if entries.iter().any(|&(_, l)| l == 0 || l > MAX_CODE_LEN) {
            return Err(Error::CorruptStream("invalid Huffman code length".into()));
        }
        entries.sort_by_key(|&(s, l)| (l, s));
        let mut syms: Vec<u16> = entries.iter().map(|e| e.0).collect();
        syms.sort_unstable();
        if syms.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::CorruptStream("duplicate Huffman symbol".into()));
        }
        // Kraft inequality
        let kraft: f64 = entries.iter().map(|&(_, l)| 0.5f64.powi(i32::from(l))).sum();
        if kraft > 1.0 + 1e-12 {
            return Err(Error::CorruptStream("Huffman lengths oversubscribed".into()));
        }
        Ok(HuffmanTable { entries })
    }

    pub fn entries(&self) -> &[(u16, u8)] {
        &self.entries
    }

    pub(crate) fn encoder(&self) -> Encoder {
        let mut codes = BTreeMap::new();
        let mut code = 0u32;
        let mut prev_len = 0u8;
        for &(sym, len) in &self.entries {
            if prev_len != 0 {
                code = (code + 1) << (len - prev_len);
            }
            prev_len = len;
            codes.insert(sym, (code, u32::from(len)));
        }
        Encoder { codes }
    }

    pub(crate) fn decoder(&self) -> Decoder {
        let mut count = [0u32; MAX_CODE_LEN as usize + 1];
        for &(_, l) in &self.entries {
            count[l as usize] += 1;
        }
        let mut first = [0u32; MAX_CODE_LEN as usize + 1];
        let mut offset = [0usize; MAX_CODE_LEN as usize + 1];
        let mut code = 0u32;
        let mut idx = 0usize;
        for len in 1..=MAX_CODE_LEN as usize {
            code <<= 1;
            first[len] = code;
            offset[len] = idx;
            code += count[len];
            idx += count[len] as usize;
        }
        Decoder {
            count,
            first,
            offset,
            symbols: self.entries.iter().map(|e| e.0).collect(),
        }
    }
}

fn code_lengths(counts: &[(u16, u64)]) -> Vec<u8> {
    // nodes 0..n are leaves; ties broken by node index for determinism
    let n = counts.len();
    let mut parent = vec![usize::MAX; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        counts.iter().enumerate().map(|(i, c)| Reverse((c.1, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().expect("two nodes");
        let Reverse((fb, b)) = heap.pop().expect("two nodes");
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((fa + fb, next)));
        next += 1;
    }
    (0..n)
        .map(|mut i| {
            let mut depth = 0u32;
            while parent[i] != usize::MAX {
                i = parent[i];
                depth += 1;
            }
            depth.min(255) as u8
        })
        .collect()
}

pub(crate) struct Encoder {
    codes: BTreeMap<u16, (u32, u32)>,
}

impl Encoder {
    pub fn put(&self, w: &mut BitWriter, sym: u16) {
        let (code, len) = self.codes[&sym];
        w.put(code, len);
    }
}

pub(crate) struct Decoder {
    count: [u32; MAX_CODE_LEN as usize + 1],
    first: [u32; MAX_CODE_LEN as usize + 1],
    offset: [usize; MAX_CODE_LEN as usize + 1],
    symbols: Vec<u16>,
}

impl Decoder {
    pub fn get(&self, r: &mut BitReader) -> Result<u16> {
        let mut code = 0u32;
        for len in 1..=MAX_CODE_LEN as usize {
            code = (code << 1) | r.bit()?;
            let delta = code.wrapping_sub(self.first[len]);
            if code >= self.first[len] && delta < self.count[len] {
                return Ok(self.symbols[self.offset[len] + delta as usize]);
            }
        }
        Err(Error::CorruptStream("invalid Huffman code".into()))
    }
}
