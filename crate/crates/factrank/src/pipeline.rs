//! Orchestration shared by the commands: training with an optional
//! pretrained encoder, reranking, evaluation and memory inspection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use factrank_core::corpus::{Article, Claim, RelevanceLabel, Vocabulary};
use factrank_core::encoder::EncoderModel;
use factrank_core::memory::{FeedbackLedger, MemoryBank};
use factrank_core::metrics::{hit_at_k, map_at_k, mrr, EvalItem};
use factrank_core::ranker::{
    fit, init_bank, new_model, pretrain_rot, ArticleLookup, PretrainReport, RankedResult, RankerConfig, Reranker,
    TrainingLog, TrainingSet,
};
use factrank_core::retrieval::{retrieve_candidates, Bm25Params, CandidateSet, InvertedIndex};
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

/// Pretrains the encoder on the training claims `cfg` would use.
pub fn pretrain(
    claims: &[Claim],
    articles: &[Article],
    labels: &[RelevanceLabel],
    vocab: &Vocabulary,
    cfg: &RankerConfig,
) -> Result<(EncoderModel, PretrainReport)> {
    let set = TrainingSet::new(claims, articles, labels, cfg)?;
    let mut model = new_model(cfg, vocab)?;
    let report = pretrain_rot(&mut model, vocab, &set, cfg)?;
    model.store.clear_snapshot();
    Ok((model, report))
}

/// Full training. With `rot`, its embeddings, ROT block and ROUGE head
/// replace pretraining; the vocabulary must be the one it was trained with.
/// Without it the encoder is pretrained here unless the `no_rouge`
/// ablation is set.
pub fn train_model(
    claims: &[Claim],
    articles: &[Article],
    labels: &[RelevanceLabel],
    vocab: Vocabulary,
    cfg: &RankerConfig,
    rot: Option<&Checkpoint>,
) -> Result<(Reranker, TrainingLog)> {
    let set = TrainingSet::new(claims, articles, labels, cfg)?;
    let mut log = TrainingLog::new(&set);
    let mut model = new_model(cfg, &vocab)?;
    match rot {
        _ if cfg.ablation.no_rouge => {}
        Some(ck) => {
            if ck.vocab != vocab {
                return Err(Error::Usage(
                    "the pretrained encoder was built with a different vocabulary".into(),
                ));
            }
            ck.load_rot_into(&mut model)?;
        }
        None => {
            log.pretrain = Some(pretrain_rot(&mut model, &vocab, &set, cfg)?);
            model.store.clear_snapshot();
        }
    }
    let (bank, init) = init_bank(&model, &vocab, &set, cfg)?;
    log.bank = Some(init);
    let mut reranker = Reranker::new(cfg.clone(), vocab, model, bank)?;
    fit(&mut reranker, &set, &mut log)?;
    Ok((reranker, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySentenceOut {
    pub index: usize,
    pub scr: f64,
    #[serde(rename = "scr_Q")]
    pub scr_q: f64,
    #[serde(rename = "scr_P")]
    pub scr_p: f64,
    pub pattern: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedArticle {
    pub article_id: String,
    pub score: f64,
    #[serde(default)]
    pub key_sentences: Vec<KeySentenceOut>,
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub claim_id: String,
    pub ranking: Vec<RankedArticle>,
}

impl From<&RankedResult> for ResultLine {
    fn from(r: &RankedResult) -> Self {
        ResultLine {
            claim_id: r.claim_id.clone(),
            ranking: r
                .ranking
                .iter()
                .map(|p| RankedArticle {
                    article_id: p.article_id.clone(),
                    score: p.y_hat,
                    key_sentences: p
                        .key_sentences
                        .sentences
                        .iter()
                        .map(|s| KeySentenceOut {
                            index: s.index,
                            scr: s.scr,
                            scr_q: s.scr_q,
                            scr_p: s.scr_p,
                            pattern: s.pattern,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl From<&CandidateSet> for ResultLine {
    fn from(c: &CandidateSet) -> Self {
        ResultLine {
            claim_id: c.claim_id.clone(),
            ranking: c
                .entries
                .iter()
                .map(|e| RankedArticle {
                    article_id: e.article_id.clone(),
                    score: e.score,
                    key_sentences: Vec::new(),
                })
                .collect(),
        }
    }
}

/// Stage-one order for every claim.
pub fn retrieve_all(claims: &[Claim], index: &InvertedIndex, k1: usize, params: &Bm25Params) -> Vec<ResultLine> {
    claims
        .iter()
        .map(|c| ResultLine::from(&retrieve_candidates(c, index, k1, params)))
        .collect()
}

/// Stage one then stage two for every claim, using the model's `k1` and
/// BM25 settings.
pub fn rerank_all(
    reranker: &Reranker,
    claims: &[Claim],
    articles: &[Article],
    index: &InvertedIndex,
) -> Result<Vec<ResultLine>> {
    let lookup = ArticleLookup::new(articles);
    let mut out = Vec::with_capacity(claims.len());
    for claim in claims {
        let cands = retrieve_candidates(claim, index, reranker.config.k1, &reranker.config.bm25);
        let ranked = reranker.rerank(claim, &cands, &lookup)?;
        out.push(ResultLine::from(&ranked));
    }
    Ok(out)
}

/// Metric values in report order.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub mrr: f64,
    pub map: Vec<f64>,
    pub hit: Vec<f64>,
    /// Claims that entered the metrics.
    pub claims: usize,
    /// Claims left out because no relevant article is in their ranking.
    pub skipped: Vec<String>,
}

impl Serialize for EvalReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(None)?;
        m.serialize_entry("MRR", &self.mrr)?;
        for (k, v) in self.ks.iter().zip(&self.map) {
            m.serialize_entry(&format!("MAP@{k}"), v)?;
        }
        for (k, v) in self.ks.iter().zip(&self.hit) {
            m.serialize_entry(&format!("HIT@{k}"), v)?;
        }
        m.serialize_entry("claims", &self.claims)?;
        m.serialize_entry("skipped", &self.skipped)?;
        m.end()
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "claims evaluated: {}", self.claims);
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "claims without a relevant candidate: {}", self.skipped.len());
        }
        let _ = writeln!(out, "MRR     {:.4}", self.mrr);
        for (k, v) in self.ks.iter().zip(&self.map) {
            let _ = writeln!(out, "MAP@{k:<3} {v:.4}");
        }
        for (k, v) in self.ks.iter().zip(&self.hit) {
            let _ = writeln!(out, "HIT@{k:<3} {v:.4}");
        }
        out
    }

    /// `MRR`, `MAP@k` or `HIT@k`.
    pub fn get(&self, name: &str) -> Option<f64> {
        if name == "MRR" {
            return Some(self.mrr);
        }
        let (metric, k) = name.split_once('@')?;
        let k: usize = k.parse().ok()?;
        let i = self.ks.iter().position(|&x| x == k)?;
        match metric {
            "MAP" => Some(self.map[i]),
            "HIT" => Some(self.hit[i]),
            _ => None,
        }
    }
}

/// Scores result rankings against labels. Claims whose ranking holds no
/// relevant article cannot be scored and are listed in `skipped`.
pub fn evaluate(results: &[ResultLine], labels: &[RelevanceLabel], ks: &[usize]) -> Result<EvalReport> {
    let mut relevant: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for l in labels.iter().filter(|l| l.label == 1) {
        relevant.entry(&l.claim_id).or_default().insert(l.article_id.clone());
    }
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        let rel = relevant.get(r.claim_id.as_str()).cloned().unwrap_or_default();
        if !r.ranking.iter().any(|a| rel.contains(&a.article_id)) {
            skipped.push(r.claim_id.clone());
            continue;
        }
        items.push(EvalItem {
            claim_id: r.claim_id.clone(),
            ranking: r.ranking.iter().map(|a| a.article_id.clone()).collect(),
            relevant: rel,
        });
    }
    Ok(EvalReport {
        ks: ks.to_vec(),
        mrr: mrr(&items)?,
        map: ks.iter().map(|&k| map_at_k(&items, k)).collect::<factrank_core::Result<_>>()?,
        hit: ks.iter().map(|&k| hit_at_k(&items, k)).collect::<factrank_core::Result<_>>()?,
        claims: items.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternNeighbour {
    pub claim_id: String,
    pub article_id: String,
    pub sentence_index: usize,
    pub distance: f64,
    /// Whether the pair's prediction was right.
    pub right: bool,
    pub y_hat: f64,
    pub text: String,
}

/// For each pattern, the `top` key sentences of the feedback ledger closest
/// to it, nearest first.
pub fn memory_neighbours(
    bank: &MemoryBank,
    ledger: &FeedbackLedger,
    articles: &[Article],
    top: usize,
) -> Result<Vec<Vec<PatternNeighbour>>> {
    let lookup = ArticleLookup::new(articles);
    let mut out = Vec::with_capacity(bank.k());
    for p in bank.patterns() {
        let mut all: Vec<(f64, bool, &factrank_core::memory::FeedbackEntry)> = ledger
            .entries()
            .map(|(_, right, e)| {
                let d = e.record.r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                (d, right, e)
            })
            .collect();
        all.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| a.2.record.claim_id.cmp(&b.2.record.claim_id))
                .then_with(|| a.2.record.article_id.cmp(&b.2.record.article_id))
                .then_with(|| a.2.record.sentence_index.cmp(&b.2.record.sentence_index))
        });
        let mut list = Vec::new();
        for (d, right, e) in all.into_iter().take(top) {
            let article = lookup.get(&e.record.article_id)?;
            let text = article
                .sentences
                .iter()
                .find(|s| s.index == e.record.sentence_index)
                .map(|s| s.text.clone())
                .unwrap_or_default();
            list.push(PatternNeighbour {
                claim_id: e.record.claim_id.clone(),
                article_id: e.record.article_id.clone(),
                sentence_index: e.record.sentence_index,
                distance: d,
                right,
                y_hat: e.y_hat,
                text,
            });
        }
        out.push(list);
    }
    Ok(out)
}

pub fn neighbours_to_text(bank: &MemoryBank, neighbours: &[Vec<PatternNeighbour>]) -> String {
    let mut out = String::new();
    for (i, list) in neighbours.iter().enumerate() {
        let norm = bank.pattern(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let _ = writeln!(out, "pattern {i} (norm {norm:.4})");
        for n in list {
            let mark = if n.right { "right" } else { "wrong" };
            let _ = writeln!(
                out,
                "  {:.4}  {mark}  {}/{}#{}  {}",
                n.distance, n.claim_id, n.article_id, n.sentence_index, n.text
            );
        }
    }
    out
}
