//! Stage-one candidate generation: an inverted index scored with Okapi BM25.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Article, Claim};
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    /// Term-frequency saturation.
    pub k: f64,
    /// Length normalization.
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the article in [`InvertedIndex::article_ids`].
    pub doc: u32,
    pub tf: u32,
}

/// Term to postings map over a fixed article collection.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    article_ids: Vec<String>,
    doc_len: Vec<u32>,
    avg_doc_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lookup: BTreeMap<String, u32>,
}

/// Indexes each article's concatenated sentence text.
pub fn index_articles(articles: &[Article]) -> Result<InvertedIndex> {
    if articles.is_empty() {
        return Err(Error::validation("cannot index an empty corpus"));
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_len = Vec::with_capacity(articles.len());
    for (doc, article) in articles.iter().enumerate() {
        let mut counts: BTreeMap<String, u32> = BTreeMap::new();
        let mut len = 0u32;
        for s in &article.sentences {
            for tok in tokenize(&s.text) {
                *counts.entry(tok).or_insert(0) += 1;
                len += 1;
            }
        }
        doc_len.push(len);
        for (term, tf) in counts {
            postings.entry(term).or_default().push(Posting {
                doc: doc as u32,
                tf,
            });
        }
    }
    InvertedIndex::from_parts(
        articles.iter().map(|a| a.id.clone()).collect(),
        doc_len,
        postings,
    )
}

impl InvertedIndex {
    /// Assembles an index from stored parts, checking its invariants.
    pub fn from_parts(
        article_ids: Vec<String>,
        doc_len: Vec<u32>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Result<Self> {
        if article_ids.is_empty() {
            return Err(Error::validation("index has no documents"));
        }
        if article_ids.len() != doc_len.len() {
            return Err(Error::validation("index doc table length mismatch"));
        }
        let mut doc_lookup = BTreeMap::new();
        for (i, id) in article_ids.iter().enumerate() {
            if doc_lookup.insert(id.clone(), i as u32).is_some() {
                return Err(Error::validation(alloc::format!("duplicate article id `{id}`")));
            }
        }
        let mut recount = vec![0u64; article_ids.len()];
        for (term, list) in &postings {
            let mut prev: Option<u32> = None;
            for p in list {
                if p.doc as usize >= article_ids.len() || p.tf == 0 || prev.is_some_and(|d| d >= p.doc) {
                    return Err(Error::validation(alloc::format!(
                        "malformed postings for term `{term}`"
                    )));
                }
                prev = Some(p.doc);
                recount[p.doc as usize] += p.tf as u64;
            }
        }
        if recount.iter().zip(&doc_len).any(|(a, &b)| *a != b as u64) {
            return Err(Error::validation("postings disagree with document lengths"));
        }
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avg_doc_len = total as f64 / doc_len.len() as f64;
        Ok(InvertedIndex {
            article_ids,
            doc_len,
            avg_doc_len,
            postings,
            doc_lookup,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.article_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn article_ids(&self) -> &[String] {
        &self.article_ids
    }

    pub fn doc_lens(&self) -> &[u32] {
        &self.doc_len
    }

    pub fn doc_len(&self, article_id: &str) -> Option<u32> {
        self.doc_lookup.get(article_id).map(|&d| self.doc_len[d as usize])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`, always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.postings(term).len() as f64;
        math::ln((n - df + 0.5) / (df + 0.5) + 1.0)
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: u32, params: &Bm25Params) -> f64 {
        let tf = tf as f64;
        let rel_len = if self.avg_doc_len > 0.0 {
            self.doc_len[doc as usize] as f64 / self.avg_doc_len
        } else {
            1.0
        };
        idf * tf * (params.k + 1.0) / (tf + params.k * (1.0 - params.b + params.b * rel_len))
    }

    /// Scores every document; entries follow [`InvertedIndex::article_ids`].
    pub fn score_all(&self, query_tokens: &[String], params: &Bm25Params) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_docs()];
        for term in distinct_terms(query_tokens) {
            let idf = self.idf(term);
            for p in self.postings(term) {
                scores[p.doc as usize] += self.term_weight(idf, p.tf, p.doc, params);
            }
        }
        scores
    }
}

fn distinct_terms(tokens: &[String]) -> BTreeSet<&str> {
    tokens.iter().map(String::as_str).collect()
}

/// BM25 score of one article for a query.
///
/// Each distinct query term counts once; terms absent from the article add 0.
pub fn bm25_score(
    query_tokens: &[String],
    article_id: &str,
    index: &InvertedIndex,
    params: &Bm25Params,
) -> Result<f64> {
    let doc = *index.doc_lookup.get(article_id).ok_or_else(|| Error::Lookup {
        kind: "article",
        id: String::from(article_id),
    })?;
    let mut score = 0.0;
    for term in distinct_terms(query_tokens) {
        let list = index.postings(term);
        if let Ok(pos) = list.binary_search_by_key(&doc, |p| p.doc) {
            score += index.term_weight(index.idf(term), list[pos].tf, doc, params);
        }
    }
    Ok(score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub article_id: String,
    pub score: f64,
}

/// Stage-one candidates for a claim, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub claim_id: String,
    pub entries: Vec<Candidate>,
}

/// Top-`k1` articles by BM25, ties broken by ascending article id.
/// Articles scoring 0 are never returned.
pub fn retrieve_candidates(
    claim: &Claim,
    index: &InvertedIndex,
    k1: usize,
    params: &Bm25Params,
) -> CandidateSet {
    let scores = index.score_all(&tokenize(&claim.text), params);
    let mut ranked: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|(_, s)| *s > 0.0)
        .collect();
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.article_ids[a.0].cmp(&index.article_ids[b.0]))
    });
    ranked.truncate(k1);
    CandidateSet {
        claim_id: claim.id.clone(),
        entries: ranked
            .into_iter()
            .map(|(d, score)| Candidate {
                article_id: index.article_ids[d].clone(),
                score,
            })
            .collect(),
    }
}
