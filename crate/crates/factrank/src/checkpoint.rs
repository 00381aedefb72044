//! Model checkpoint file: a plain-text manifest followed by a binary payload.
//!
//! ```text
//! factrank-checkpoint 1
//! config <RankerConfig as one-line JSON>
//! vocab <n>
//! <token>\t<frequency>            (n lines, in id order)
//! bank <K> <epoch>                 or `bank none`
//! tensors <m>
//! <name> <rows> <cols> <offset>    (m lines; offset in bytes into the payload)
//! payload <bytes>
//! <little-endian f64 values, row-major>
//! ```
//!
//! Encoder parameters keep their store names; memory patterns are stored as
//! `pattern_0` .. `pattern_{K-1}`, each `1 x dim`.

use std::collections::BTreeMap;
use std::path::Path;

use factrank_core::corpus::Vocabulary;
use factrank_core::encoder::EncoderModel;
use factrank_core::memory::MemoryBank;
use factrank_core::ranker::{new_model, RankerConfig, Reranker};
use factrank_core::tensor::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_file, vocab_from_text, vocab_to_text, write_atomic};

pub const HEADER: &str = "factrank-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RankerConfig,
    pub vocab: Vocabulary,
    /// Encoder parameters in store order, then patterns.
    pub tensors: Vec<(String, Tensor)>,
    /// `Some(epoch)` when the checkpoint carries a memory bank.
    pub bank_epoch: Option<usize>,
}

fn pattern_name(i: usize) -> String {
    format!("pattern_{i}")
}

impl Checkpoint {
    /// An encoder without a memory bank, as written after ROT pretraining.
    pub fn from_model(config: &RankerConfig, vocab: &Vocabulary, model: &EncoderModel) -> Self {
        Checkpoint {
            config: config.clone(),
            vocab: vocab.clone(),
            tensors: model
                .store
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.clone()))
                .collect(),
            bank_epoch: None,
        }
    }

    pub fn from_reranker(r: &Reranker) -> Self {
        let mut ck = Self::from_model(&r.config, &r.vocab, &r.model);
        for (i, p) in r.bank.patterns().iter().enumerate() {
            ck.tensors.push((pattern_name(i), Tensor::row_vector(p.clone())));
        }
        ck.bank_epoch = Some(r.bank.epoch());
        ck
    }

    fn by_name(&self) -> BTreeMap<&str, &Tensor> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    /// Rebuilds the encoder described by the stored config and fills in
    /// every parameter.
    pub fn model(&self) -> Result<EncoderModel> {
        let mut model = new_model(&self.config, &self.vocab)?;
        let tensors = self.by_name();
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = tensors
                .get(name.as_str())
                .ok_or_else(|| Error::Usage(format!("checkpoint lacks parameter `{name}`")))?;
            model.store.assign(id, (*t).clone())?;
        }
        let extra = self
            .tensors
            .iter()
            .find(|(n, _)| !n.starts_with("pattern_") && model.store.id(n).is_none());
        if let Some((n, _)) = extra {
            return Err(Error::Usage(format!("checkpoint has unknown parameter `{n}`")));
        }
        model.set_trainable_only(&[]);
        Ok(model)
    }

    pub fn bank(&self) -> Result<Option<MemoryBank>> {
        let Some(epoch) = self.bank_epoch else {
            return Ok(None);
        };
        let tensors = self.by_name();
        let mut patterns = Vec::new();
        while let Some(t) = tensors.get(pattern_name(patterns.len()).as_str()) {
            patterns.push(t.data().to_vec());
        }
        Ok(Some(MemoryBank::from_patterns(patterns, epoch)?))
    }

    pub fn reranker(&self) -> Result<Reranker> {
        let bank = self
            .bank()?
            .ok_or_else(|| Error::Usage("checkpoint has no memory bank; it is not a trained model".into()))?;
        Ok(Reranker::new(self.config.clone(), self.vocab.clone(), self.model()?, bank)?)
    }

    /// Copies embeddings, the ROT block and the ROUGE head into `model`.
    /// Shapes must agree.
    pub fn load_rot_into(&self, model: &mut EncoderModel) -> Result<()> {
        let tensors = self.by_name();
        let mut ids = model.rot_param_ids();
        ids.extend(model.rouge_head_ids());
        for id in ids {
            let name = model.store.name(id).to_string();
            let t = tensors
                .get(name.as_str())
                .ok_or_else(|| Error::Usage(format!("checkpoint lacks parameter `{name}`")))?;
            model.store.assign(id, (*t).clone()).map_err(|e| {
                Error::Usage(format!("pretrained encoder does not fit this configuration: {e}"))
            })?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = format!("{HEADER} {VERSION}\n");
        head.push_str("config ");
        head.push_str(&serde_json::to_string(&self.config).expect("config serializes"));
        head.push('\n');
        head.push_str(&format!("vocab {}\n", self.vocab.entries().len()));
        head.push_str(&vocab_to_text(&self.vocab));
        match self.bank_epoch {
            Some(epoch) => {
                let k = self.tensors.iter().filter(|(n, _)| n.starts_with("pattern_")).count();
                head.push_str(&format!("bank {k} {epoch}\n"));
            }
            None => head.push_str("bank none\n"),
        }
        head.push_str(&format!("tensors {}\n", self.tensors.len()));
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            head.push_str(&format!("{name} {} {} {offset}\n", t.rows(), t.cols()));
            offset += 8 * t.len();
        }
        head.push_str(&format!("payload {offset}\n"));
        let mut out = head.into_bytes();
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::format(path, format!("checkpoint: {msg}"));
        let mut pos = 0usize;
        let mut line = || -> Result<&str> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("truncated manifest".into()))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| bad("manifest is not UTF-8".into()))
        };
        let first = line()?;
        match first.split_once(' ') {
            Some((HEADER, v)) if v == VERSION.to_string() => {}
            Some((HEADER, v)) => return Err(bad(format!("unsupported version {v}"))),
            _ => return Err(bad("not a checkpoint file".into())),
        }
        let config_json = line()?
            .strip_prefix("config ")
            .ok_or_else(|| bad("expected `config`".into()))?;
        let config: RankerConfig =
            serde_json::from_str(config_json).map_err(|e| bad(format!("config: {e}")))?;
        let n_vocab: usize = field(line()?, "vocab").ok_or_else(|| bad("expected `vocab <n>`".into()))?;
        let mut vocab_text = String::new();
        for _ in 0..n_vocab {
            vocab_text.push_str(line()?);
            vocab_text.push('\n');
        }
        let vocab = vocab_from_text(path, &vocab_text)?;
        let bank_line = line()?;
        let bank: Option<(usize, usize)> = match bank_line {
            "bank none" => None,
            l => {
                let mut it = l.strip_prefix("bank ").unwrap_or("").split(' ').map(str::parse::<usize>);
                match (it.next(), it.next(), it.next()) {
                    (Some(Ok(k)), Some(Ok(e)), None) => Some((k, e)),
                    _ => return Err(bad(format!("bad bank line `{l}`"))),
                }
            }
        };
        let n_tensors: usize = field(line()?, "tensors").ok_or_else(|| bad("expected `tensors <m>`".into()))?;
        let mut shapes = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let l = line()?;
            let parts: Vec<&str> = l.split(' ').collect();
            let parsed = match parts.as_slice() {
                [name, r, c, o] => match (r.parse::<usize>(), c.parse::<usize>(), o.parse::<usize>()) {
                    (Ok(r), Ok(c), Ok(o)) => Some((name.to_string(), r, c, o)),
                    _ => None,
                },
                _ => None,
            };
            shapes.push(parsed.ok_or_else(|| bad(format!("bad tensor line `{l}`")))?);
        }
        let payload_len: usize = field(line()?, "payload").ok_or_else(|| bad("expected `payload <bytes>`".into()))?;
        let payload = &bytes[pos..];
        if payload.len() != payload_len {
            return Err(bad(format!("payload is {} bytes, manifest says {payload_len}", payload.len())));
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        let mut expected = 0usize;
        for (name, rows, cols, offset) in shapes {
            let n = rows.checked_mul(cols).ok_or_else(|| bad(format!("`{name}` is too large")))?;
            if offset != expected || offset + 8 * n > payload_len {
                return Err(bad(format!("`{name}` has offset {offset}, expected {expected}")));
            }
            let data = payload[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            expected = offset + 8 * n;
            tensors.push((name, Tensor::new(rows, cols, data)?));
        }
        if expected != payload_len {
            return Err(bad("payload has trailing bytes".into()));
        }
        let bank_epoch = match bank {
            Some((k, epoch)) => {
                let have = tensors.iter().filter(|(n, _)| n.starts_with("pattern_")).count();
                if have != k {
                    return Err(bad(format!("bank line says {k} patterns, found {have}")));
                }
                Some(epoch)
            }
            None => None,
        };
        Ok(Checkpoint {
            config,
            vocab,
            tensors,
            bank_epoch,
        })
    }

    /// Writes the file and returns its bytes.
    pub fn save(&self, path: &Path) -> Result<Vec<u8>> {
        let bytes = self.to_bytes();
        write_atomic(path, &bytes)?;
        Ok(bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_file(path)?)
    }
}

fn field<T: std::str::FromStr>(line: &str, key: &str) -> Option<T> {
    line.strip_prefix(key)?.strip_prefix(' ')?.parse().ok()
}

/// Content hash in the style of git's SHA-256 object format:
/// `sha256("blob <len>\0" ++ bytes)`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}
