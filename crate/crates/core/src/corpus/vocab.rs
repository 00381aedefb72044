use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::text::tokenize;
use crate::{Error, Result};

/// Word vocabulary with four reserved ids.
///
/// Text tokens get dense ids starting at [`Vocabulary::FIRST_TOKEN`], ordered
/// by descending corpus frequency with a lexicographic tie-break.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<(String, u64)>", try_from = "Vec<(String, u64)>")]
pub struct Vocabulary {
    entries: Vec<(String, u64)>,
    index: BTreeMap<String, u32>,
}

impl From<Vocabulary> for Vec<(String, u64)> {
    fn from(v: Vocabulary) -> Self {
        v.entries
    }
}

impl TryFrom<Vec<(String, u64)>> for Vocabulary {
    type Error = Error;

    fn try_from(entries: Vec<(String, u64)>) -> Result<Self> {
        Vocabulary::from_entries(entries)
    }
}

impl Vocabulary {
    pub const PAD: u32 = 0;
    pub const CLS: u32 = 1;
    pub const SEP: u32 = 2;
    pub const UNK: u32 = 3;
    pub const FIRST_TOKEN: u32 = 4;
    pub const SPECIAL_NAMES: [&'static str; 4] = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"];

    pub fn build<I, S>(texts: I, min_freq: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_freq == 0 {
            return Err(Error::config("min_freq must be at least 1"));
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in texts {
            for tok in tokenize(text.as_ref()) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, u64)> =
            counts.into_iter().filter(|(_, n)| *n >= min_freq).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_entries(entries)
    }

    /// Rebuilds a vocabulary from `(token, frequency)` pairs already in id order.
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, (tok, _)) in entries.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(|c| !c.is_alphanumeric()) {
                return Err(Error::validation(alloc::format!(
                    "vocabulary token `{tok}` is not a word token"
                )));
            }
            if index.insert(tok.clone(), Self::FIRST_TOKEN + i as u32).is_some() {
                return Err(Error::validation(alloc::format!(
                    "duplicate vocabulary token `{tok}`"
                )));
            }
        }
        Ok(Vocabulary { entries, index })
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    /// Total number of ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.entries.len() + Self::FIRST_TOKEN as usize
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of a token, [`Vocabulary::UNK`] when absent.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        if id < Self::FIRST_TOKEN {
            Some(Self::SPECIAL_NAMES[id as usize])
        } else {
            self.entries
                .get((id - Self::FIRST_TOKEN) as usize)
                .map(|(t, _)| t.as_str())
        }
    }

    pub fn frequency(&self, token: &str) -> Option<u64> {
        self.get(token)
            .map(|id| self.entries[(id - Self::FIRST_TOKEN) as usize].1)
    }

    /// Tokenizes `text` and maps each token to its id.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

/// Token ids for a `[CLS] claim [SEP] sentence [SEP]` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// 0 for the claim span (including `[CLS]` and the first `[SEP]`), 1 after.
    pub segments: Vec<u8>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of claim tokens between `[CLS]` and the first `[SEP]`.
    pub fn claim_len(&self) -> usize {
        self.segments.iter().filter(|&&s| s == 0).count().saturating_sub(2)
    }

    /// Number of sentence tokens before the trailing `[SEP]`.
    pub fn sentence_len(&self) -> usize {
        self.segments.iter().filter(|&&s| s == 1).count().saturating_sub(1)
    }
}

/// Builds the encoder input for a claim/sentence pair.
pub fn tokenize_pair(q: &str, s: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    tokenize_pair_ids(&vocab.encode(q), &vocab.encode(s), max_len)
}

/// [`tokenize_pair`] over pre-encoded ids.
///
/// Over-long pairs lose sentence tokens first, then claim tokens; the three
/// special tokens always survive.
pub fn tokenize_pair_ids(q: &[u32], s: &[u32], max_len: usize) -> Result<TokenSeq> {
    if max_len < 8 {
        return Err(Error::contract(alloc::format!(
            "max_len must be at least 8, got {max_len}"
        )));
    }
    let budget = max_len - 3;
    let q_len = q.len().min(budget);
    let s_len = s.len().min(budget - q_len);

    let mut ids = Vec::with_capacity(q_len + s_len + 3);
    let mut segments = Vec::with_capacity(ids.capacity());
    ids.push(Vocabulary::CLS);
    ids.extend_from_slice(&q[..q_len]);
    ids.push(Vocabulary::SEP);
    segments.resize(ids.len(), 0);
    ids.extend_from_slice(&s[..s_len]);
    ids.push(Vocabulary::SEP);
    segments.resize(ids.len(), 1);
    Ok(TokenSeq { ids, segments })
}
