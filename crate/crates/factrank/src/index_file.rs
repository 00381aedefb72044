//! Binary inverted-index file. All integers are little-endian.
//!
//! ```text
//! magic        b"FRIX"
//! version      u32 (= 1)
//! n_docs       u64
//! avg_doc_len  f64
//! n_docs times:  u32 id length, id bytes (UTF-8), u32 token count
//! n_terms      u64
//! n_terms times: u32 block length, then inside the block:
//!                u32 term length, term bytes, u32 posting count,
//!                postings as (u32 doc position, u32 term frequency)
//! ```
//!
//! Terms appear in byte order. `avg_doc_len` must equal the value recomputed
//! from the document table.

use std::collections::BTreeMap;
use std::path::Path;

use factrank_core::retrieval::{InvertedIndex, Posting};

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};

pub const MAGIC: &[u8; 4] = b"FRIX";
pub const VERSION: u32 = 1;

pub fn encode(index: &InvertedIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(index.n_docs() as u64).to_le_bytes());
    out.extend_from_slice(&index.avg_doc_len().to_le_bytes());
    for (id, len) in index.article_ids().iter().zip(index.doc_lens()) {
        put_str(&mut out, id);
        out.extend_from_slice(&len.to_le_bytes());
    }
    let terms: Vec<(&str, &[Posting])> = index.terms().collect();
    out.extend_from_slice(&(terms.len() as u64).to_le_bytes());
    for (term, postings) in terms {
        let mut block = Vec::with_capacity(8 + term.len() + 8 * postings.len());
        put_str(&mut block, term);
        block.extend_from_slice(&(postings.len() as u32).to_le_bytes());
        for p in postings {
            block.extend_from_slice(&p.doc.to_le_bytes());
            block.extend_from_slice(&p.tf.to_le_bytes());
        }
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(&block);
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn string(&mut self) -> Option<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<InvertedIndex> {
    let bad = |msg: &str| Error::format(path, format!("index file: {msg}"));
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    let version = r.u32().ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n_docs = r.u64().ok_or_else(|| bad("truncated header"))? as usize;
    let avg = r.f64().ok_or_else(|| bad("truncated header"))?;
    let mut ids = Vec::new();
    let mut lens = Vec::new();
    for _ in 0..n_docs {
        ids.push(r.string().ok_or_else(|| bad("truncated document table"))?);
        lens.push(r.u32().ok_or_else(|| bad("truncated document table"))?);
    }
    let n_terms = r.u64().ok_or_else(|| bad("truncated term count"))?;
    let mut postings = BTreeMap::new();
    for _ in 0..n_terms {
        let len = r.u32().ok_or_else(|| bad("truncated term block"))? as usize;
        let block = r.take(len).ok_or_else(|| bad("truncated term block"))?;
        let mut b = Reader { buf: block, pos: 0 };
        let term = b.string().ok_or_else(|| bad("bad term"))?;
        let n = b.u32().ok_or_else(|| bad("bad posting count"))?;
        let mut list = Vec::new();
        for _ in 0..n {
            let doc = b.u32().ok_or_else(|| bad("truncated postings"))?;
            let tf = b.u32().ok_or_else(|| bad("truncated postings"))?;
            list.push(Posting { doc, tf });
        }
        if b.pos != block.len() {
            return Err(bad(&format!("block for `{term}` has trailing bytes")));
        }
        if postings.insert(term, list).is_some() {
            return Err(bad("duplicate term"));
        }
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let index = InvertedIndex::from_parts(ids, lens, postings).map_err(|e| bad(&e.to_string()))?;
    if index.avg_doc_len().to_bits() != avg.to_bits() {
        return Err(bad("avg_doc_len disagrees with document table"));
    }
    Ok(index)
}

pub fn save(path: &Path, index: &InvertedIndex) -> Result<Vec<u8>> {
    let bytes = encode(index);
    write_atomic(path, &bytes)?;
    Ok(bytes)
}

pub fn load(path: &Path) -> Result<InvertedIndex> {
    decode(path, &read_file(path)?)
}
