//! Claims, articles, relevance labels, tokenization and the synthetic corpus.

mod synthetic;
mod text;
mod vocab;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use synthetic::{generate_synthetic_corpus, GeneratorConfig, PlantedSentences, SyntheticCorpus};
pub use text::{segment_sentences, tokenize};
pub use vocab::{tokenize_pair, tokenize_pair_ids, TokenSeq, Vocabulary};

/// A claim used as the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
}

/// A sentence-segmented fact-checking article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub source: String,
    pub sentences: Vec<Sentence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceLabel {
    pub claim_id: String,
    pub article_id: String,
    pub label: u8,
}

impl Claim {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Claim {
            id: id.into(),
            text: text.into(),
        }
    }
}

impl Article {
    /// Builds an article from already split sentences. Blank entries are dropped.
    pub fn from_sentences<S: AsRef<str>>(
        id: impl Into<String>,
        source: impl Into<String>,
        sentences: &[S],
    ) -> Result<Self> {
        let sentences: Vec<Sentence> = sentences
            .iter()
            .map(|s| s.as_ref().trim())
            .filter(|s| !s.is_empty())
            .enumerate()
            .map(|(index, text)| Sentence {
                index,
                text: String::from(text),
            })
            .collect();
        Self::checked(id.into(), source.into(), sentences)
    }

    /// Builds an article from raw text through [`segment_sentences`].
    pub fn from_text(id: impl Into<String>, source: impl Into<String>, raw: &str) -> Result<Self> {
        Self::checked(id.into(), source.into(), segment_sentences(raw))
    }

    fn checked(id: String, source: String, sentences: Vec<Sentence>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::validation(alloc::format!(
                "article `{id}` has no sentences"
            )));
        }
        Ok(Article {
            id,
            source,
            sentences,
        })
    }

    /// Full text as the concatenation of its sentences.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&s.text);
        }
        out
    }
}

pub fn validate_claims(claims: &[Claim]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for c in claims {
        if tokenize(&c.text).is_empty() {
            return Err(Error::validation(alloc::format!(
                "claim `{}` has no tokens",
                c.id
            )));
        }
        if !seen.insert(c.id.as_str()) {
            return Err(Error::validation(alloc::format!(
                "duplicate claim id `{}`",
                c.id
            )));
        }
    }
    Ok(())
}

pub fn validate_articles(articles: &[Article]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for a in articles {
        if a.sentences.is_empty() {
            return Err(Error::validation(alloc::format!(
                "article `{}` has no sentences",
                a.id
            )));
        }
        if a.sentences.iter().enumerate().any(|(i, s)| s.index != i) {
            return Err(Error::validation(alloc::format!(
                "article `{}` has non-contiguous sentence indices",
                a.id
            )));
        }
        if !seen.insert(a.id.as_str()) {
            return Err(Error::validation(alloc::format!(
                "duplicate article id `{}`",
                a.id
            )));
        }
    }
    Ok(())
}

/// Checks that every label points at a known claim and article, that labels
/// are binary, and that no pair is labeled twice.
pub fn validate_labels(
    labels: &[RelevanceLabel],
    claims: &[Claim],
    articles: &[Article],
) -> Result<()> {
    let claim_ids: BTreeSet<&str> = claims.iter().map(|c| c.id.as_str()).collect();
    let article_ids: BTreeSet<&str> = articles.iter().map(|a| a.id.as_str()).collect();
    let mut seen = BTreeSet::new();
    for l in labels {
        if l.label > 1 {
            return Err(Error::validation(alloc::format!(
                "label for ({}, {}) is {}, expected 0 or 1",
                l.claim_id,
                l.article_id,
                l.label
            )));
        }
        if !claim_ids.contains(l.claim_id.as_str()) {
            return Err(Error::Lookup {
                kind: "claim",
                id: l.claim_id.clone(),
            });
        }
        if !article_ids.contains(l.article_id.as_str()) {
            return Err(Error::Lookup {
                kind: "article",
                id: l.article_id.clone(),
            });
        }
        if !seen.insert((l.claim_id.as_str(), l.article_id.as_str())) {
            return Err(Error::validation(alloc::format!(
                "duplicate label for ({}, {})",
                l.claim_id,
                l.article_id
            )));
        }
    }
    Ok(())
}
