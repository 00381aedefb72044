//! JSON-lines corpus files, vocabulary files and atomic writes.
//!
//! - claims: `{"id", "text"}`
//! - articles: `{"id", "source", "sentences": [..]}` or `{"id", "source", "text"}`
//! - labels: `{"claim_id", "article_id", "label"}`
//!
//! Unknown fields are ignored. Blank lines are skipped.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use factrank_core::corpus::{validate_articles, validate_claims, Article, Claim, RelevanceLabel, Vocabulary};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|_| Error::format(path, "file is not valid UTF-8"))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Parses one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize to JSON");
        out.push(b'\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(records))
}

pub fn load_claims(path: &Path) -> Result<Vec<Claim>> {
    let claims: Vec<Claim> = read_jsonl(path)?;
    validate_claims(&claims)?;
    Ok(claims)
}

#[derive(Deserialize)]
struct ArticleRecord {
    id: String,
    source: String,
    sentences: Option<Vec<String>>,
    text: Option<String>,
}

pub fn load_articles(path: &Path) -> Result<Vec<Article>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: ArticleRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let article = match (rec.sentences, rec.text) {
            (Some(s), _) => Article::from_sentences(rec.id, rec.source, &s)?,
            (None, Some(t)) => Article::from_text(rec.id, rec.source, &t)?,
            (None, None) => return Err(parse_err("article needs `sentences` or `text`".into())),
        };
        out.push(article);
    }
    validate_articles(&out)?;
    Ok(out)
}

#[derive(Serialize)]
struct ArticleOut<'a> {
    id: &'a str,
    source: &'a str,
    sentences: Vec<&'a str>,
}

/// Articles in the pre-split `sentences` form.
pub fn articles_to_jsonl(articles: &[Article]) -> Vec<u8> {
    let records: Vec<ArticleOut> = articles
        .iter()
        .map(|a| ArticleOut {
            id: &a.id,
            source: &a.source,
            sentences: a.sentences.iter().map(|s| s.text.as_str()).collect(),
        })
        .collect();
    to_jsonl(&records)
}

pub fn write_articles(path: &Path, articles: &[Article]) -> Result<()> {
    write_atomic(path, &articles_to_jsonl(articles))
}

/// Labels must be 0 or 1 and each pair may appear once. Whether the ids
/// exist is checked later against the claims and articles in use.
pub fn load_labels(path: &Path) -> Result<Vec<RelevanceLabel>> {
    let labels: Vec<RelevanceLabel> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for l in &labels {
        if l.label > 1 {
            return Err(factrank_core::Error::Validation(format!(
                "label for ({}, {}) is {}, expected 0 or 1",
                l.claim_id, l.article_id, l.label
            ))
            .into());
        }
        if !seen.insert((l.claim_id.as_str(), l.article_id.as_str())) {
            return Err(factrank_core::Error::Validation(format!(
                "pair ({}, {}) is labelled twice",
                l.claim_id, l.article_id
            ))
            .into());
        }
    }
    Ok(labels)
}

/// One `token<TAB>frequency` line per entry, in id order.
pub fn vocab_to_text(vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for (tok, n) in vocab.entries() {
        out.push_str(tok);
        out.push('\t');
        out.push_str(&n.to_string());
        out.push('\n');
    }
    out
}

pub fn vocab_from_text(path: &Path, text: &str) -> Result<Vocabulary> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.into(),
        };
        let (tok, n) = line.split_once('\t').ok_or_else(|| bad("expected `token<TAB>frequency`"))?;
        let n: u64 = n.parse().map_err(|_| bad("frequency is not a count"))?;
        entries.push((tok.to_string(), n));
    }
    Ok(Vocabulary::from_entries(entries)?)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    vocab_from_text(path, &read_text(path)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_atomic(path, vocab_to_text(vocab).as_bytes())
}
