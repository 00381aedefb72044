//! Key-sentence selection, article relevance prediction and reranking.
//!
//! Every sentence of a candidate article is scored by how close its mean
//! embedding is to the claim's (`scr_Q`) and how close the residual is to its
//! nearest memory pattern (`scr_P`). The top `k2` sentences go through the
//! encoder stacks; their pooled features, weighted by normalized score, feed
//! the prediction head.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_pair_ids, Article, Claim, Vocabulary};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::math::l2_norm;
use crate::memory::{residual, MemoryBank, ThresholdRule};
use crate::retrieval::{Bm25Params, CandidateSet};
use crate::tensor::{AdamConfig, Graph, Tensor, Var};
use crate::{Error, Result};

mod train;

pub use train::{
    fit, init_bank, make_training_pairs, new_model, pretrain_rot, train, BankInit, EpochReport, PretrainReport,
    TrainingLog, TrainingPair, TrainingSet,
};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeedbackMode {
    /// Only the highest-scoring key sentence of each pair.
    #[default]
    TopOne,
    AllKeySentences,
}

/// Switches that remove or replace one component of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_rouge: bool,
    pub rand_mem_init: bool,
    pub no_mem_update: bool,
    pub no_pmb: bool,
    pub avg_pool: bool,
    pub no_pattern_aggr: bool,
}

impl Ablation {
    pub const VARIANTS: [&'static str; 6] = [
        "no-rouge",
        "rand-mem-init",
        "no-mem-update",
        "no-pmb",
        "avg-pool",
        "no-pattern-aggr",
    ];

    pub fn variant(name: &str) -> Result<Self> {
        let mut a = Ablation::default();
        match name {
            "no-rouge" => a.no_rouge = true,
            "rand-mem-init" => a.rand_mem_init = true,
            "no-mem-update" => a.no_mem_update = true,
            "no-pmb" => a.no_pmb = true,
            "avg-pool" => a.avg_pool = true,
            "no-pattern-aggr" => a.no_pattern_aggr = true,
            other => {
                return Err(Error::config(format!(
                    "unknown ablation variant {other:?}; expected one of {}",
                    Ablation::VARIANTS.join(", ")
                )))
            }
        }
        Ok(a)
    }

    /// Whether pattern vectors are appended to the aggregated feature.
    pub fn pattern_features(&self) -> bool {
        !self.no_pmb && !self.no_pattern_aggr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub max_pairs: usize,
    /// Share of a subsample drawn from pairs with non-zero ROUGE-2, when
    /// the population exceeds `max_pairs`.
    pub overlap_fraction: f64,
    pub holdout_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            max_pairs: 200_000,
            overlap_fraction: 0.5,
            holdout_fraction: 0.1,
            epochs: 2,
            batch_size: 64,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub encoder: EncoderConfig,
    pub k1: usize,
    pub k2: usize,
    /// Number of memory patterns.
    pub patterns: usize,
    pub lambda_r: f64,
    pub lambda_q: f64,
    pub lambda_p: f64,
    pub lambda_m: f64,
    pub threshold: ThresholdRule,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub bm25: Bm25Params,
    pub pretrain: PretrainConfig,
    pub feedback: FeedbackMode,
    /// Upper bound on the positive-class loss weight.
    pub positive_weight_cap: f64,
    /// Share of training claims held out for early stopping.
    pub val_fraction: f64,
    pub ablation: Ablation,
}

impl Default for RankerConfig {
    fn default() -> Self {
        RankerConfig {
            encoder: EncoderConfig::default(),
            k1: 50,
            k2: 3,
            patterns: 20,
            lambda_r: 0.01,
            lambda_q: 0.6,
            lambda_p: 0.4,
            lambda_m: 0.3,
            threshold: ThresholdRule::default(),
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 5,
            patience: 2,
            seed: 0,
            bm25: Bm25Params::default(),
            pretrain: PretrainConfig::default(),
            feedback: FeedbackMode::default(),
            positive_weight_cap: 10.0,
            val_fraction: 0.1,
            ablation: Ablation::default(),
        }
    }
}

impl RankerConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_r", self.lambda_r),
            ("lambda_q", self.lambda_q),
            ("lambda_p", self.lambda_p),
            ("lambda_m", self.lambda_m),
        ];
        for (name, v) in lambdas {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        if (self.lambda_q + self.lambda_p - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "lambda_q + lambda_p must be 1, got {} + {}",
                self.lambda_q, self.lambda_p
            )));
        }
        for (name, v) in [
            ("k1", self.k1),
            ("k2", self.k2),
            ("patterns", self.patterns),
            ("batch_size", self.batch_size),
            ("pretrain.batch_size", self.pretrain.batch_size),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction)
            || !(0.0..1.0).contains(&self.pretrain.holdout_fraction)
            || !(0.0..=1.0).contains(&self.pretrain.overlap_fraction)
        {
            return Err(Error::config("fractions must lie in [0, 1)"));
        }
        if !(self.positive_weight_cap >= 1.0) {
            return Err(Error::config("positive_weight_cap must be at least 1"));
        }
        let (ThresholdRule::Quantile { low, high } | ThresholdRule::Absolute { low, high }) = self.threshold;
        if !(low < high) {
            return Err(Error::config(format!("residual band needs low < high, got {low} and {high}")));
        }
        Ok(())
    }

    /// `(lambda_q, lambda_p)` after ablation overrides.
    pub fn score_weights(&self) -> (f64, f64) {
        if self.ablation.no_pmb {
            (1.0, 0.0)
        } else {
            (self.lambda_q, self.lambda_p)
        }
    }

    pub fn head_input(&self) -> usize {
        if self.ablation.pattern_features() {
            3 * self.encoder.dim
        } else {
            2 * self.encoder.dim
        }
    }
}

/// `1 - (x - min) / (max - min)`; all ones when every value is equal.
pub fn scale(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![1.0; values.len()];
    }
    values.iter().map(|x| 1.0 - (x - min) / (max - min)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub index: usize,
    pub scr_q: f64,
    pub scr_p: f64,
    pub scr: f64,
    /// Nearest memory pattern.
    pub pattern: usize,
    pub pattern_distance: f64,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
}

/// Scores sentences of one article from their residuals `(index, r)`.
pub fn score_residuals(residuals: &[(usize, Vec<f64>)], bank: &MemoryBank, lambda_q: f64, lambda_p: f64) -> Vec<ScoredSentence> {
    let norms: Vec<f64> = residuals.iter().map(|(_, r)| l2_norm(r)).collect();
    let nearest: Vec<(usize, f64)> = residuals.iter().map(|(_, r)| bank.nearest_pattern(r)).collect();
    let dists: Vec<f64> = nearest.iter().map(|n| n.1).collect();
    let scr_q = scale(&norms);
    let scr_p = scale(&dists);
    residuals
        .iter()
        .enumerate()
        .map(|(i, (index, r))| ScoredSentence {
            index: *index,
            scr_q: scr_q[i],
            scr_p: scr_p[i],
            scr: lambda_q * scr_q[i] + lambda_p * scr_p[i],
            pattern: nearest[i].0,
            pattern_distance: nearest[i].1,
            residual: r.clone(),
            residual_norm: norms[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySentenceSet {
    /// Best first.
    pub sentences: Vec<ScoredSentence>,
    pub weights: Vec<f64>,
}

impl KeySentenceSet {
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Top `k2` by `scr`, ties to the lower sentence index, with weights
/// normalized over the selection (uniform when they sum to zero).
pub fn select_key_sentences(scored: &[ScoredSentence], k2: usize) -> KeySentenceSet {
    let mut order: Vec<&ScoredSentence> = scored.iter().collect();
    order.sort_by(|a, b| b.scr.total_cmp(&a.scr).then(a.index.cmp(&b.index)));
    order.truncate(k2);
    let total: f64 = order.iter().map(|s| s.scr).sum();
    let weights = if total > 0.0 {
        order.iter().map(|s| s.scr / total).collect()
    } else {
        vec![1.0 / order.len() as f64; order.len()]
    };
    KeySentenceSet {
        sentences: order.into_iter().cloned().collect(),
        weights,
    }
}

/// `[q, s, m]`.
pub fn build_feature(q: &[f64], s: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    if q.len() != s.len() || q.len() != m.len() {
        return Err(Error::dim(
            "build_feature",
            format!("{}, {}, {}", q.len(), s.len(), m.len()),
        ));
    }
    Ok(q.iter().chain(s).chain(m).copied().collect())
}

/// Binary cross-entropy with the prediction clamped away from 0 and 1.
pub fn matching_loss(y_hat: f64, y: u8) -> f64 {
    let p = y_hat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if y == 1 {
        -crate::math::ln(p)
    } else {
        -crate::math::ln(1.0 - p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub claim_id: String,
    pub article_id: String,
    pub y_hat: f64,
    pub key_sentences: KeySentenceSet,
    pub label: Option<u8>,
}

impl Prediction {
    pub fn relevant(&self) -> bool {
        self.y_hat > 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub claim_id: String,
    pub ranking: Vec<Prediction>,
}

/// Token ids and mean embedding of a piece of text.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub ids: Vec<u32>,
    pub embedding: Vec<f64>,
}

/// Sentences of an article that have at least one token.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedArticle {
    pub id: String,
    pub sentences: Vec<(usize, EncodedText)>,
}

/// Articles by id.
pub struct ArticleLookup<'a> {
    by_id: BTreeMap<&'a str, &'a Article>,
}

impl<'a> ArticleLookup<'a> {
    pub fn new(articles: &'a [Article]) -> Self {
        ArticleLookup {
            by_id: articles.iter().map(|a| (a.id.as_str(), a)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&'a Article> {
        self.by_id.get(id).copied().ok_or_else(|| Error::Lookup {
            kind: "article",
            id: id.into(),
        })
    }
}

/// A trained model: vocabulary, encoder weights and memory bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranker {
    pub config: RankerConfig,
    pub vocab: Vocabulary,
    pub model: EncoderModel,
    pub bank: MemoryBank,
}

impl Reranker {
    pub fn new(config: RankerConfig, vocab: Vocabulary, model: EncoderModel, bank: MemoryBank) -> Result<Self> {
        config.validate()?;
        if model.config.vocab_size != vocab.len() {
            return Err(Error::contract(format!(
                "model expects {} tokens, vocabulary has {}",
                model.config.vocab_size,
                vocab.len()
            )));
        }
        if bank.dim() != model.config.dim {
            return Err(Error::dim("reranker", format!("bank dim {} vs model dim {}", bank.dim(), model.config.dim)));
        }
        if model.head_input() != config.head_input() {
            return Err(Error::contract("prediction head width does not match the ablation setting"));
        }
        Ok(Reranker {
            config,
            vocab,
            model,
            bank,
        })
    }

    pub fn encode_text(&self, text: &str) -> Result<Option<EncodedText>> {
        let ids = self.vocab.encode(text);
        if ids.is_empty() {
            return Ok(None);
        }
        let embedding = self.model.avg_embedding_ids(&ids)?;
        Ok(Some(EncodedText { ids, embedding }))
    }

    pub fn encode_claim(&self, claim: &Claim) -> Result<EncodedText> {
        self.encode_text(&claim.text)?
            .ok_or_else(|| Error::validation(format!("claim {} has no tokens", claim.id)))
    }

    pub fn encode_article(&self, article: &Article) -> Result<EncodedArticle> {
        let mut sentences = Vec::with_capacity(article.sentences.len());
        for s in &article.sentences {
            if let Some(enc) = self.encode_text(&s.text)? {
                sentences.push((s.index, enc));
            }
        }
        Ok(EncodedArticle {
            id: article.id.clone(),
            sentences,
        })
    }

    pub fn score_encoded(&self, claim: &EncodedText, article: &EncodedArticle) -> Result<Vec<ScoredSentence>> {
        let residuals = article
            .sentences
            .iter()
            .map(|(i, s)| Ok((*i, residual(&claim.embedding, &s.embedding)?)))
            .collect::<Result<Vec<_>>>()?;
        let (lq, lp) = self.config.score_weights();
        Ok(score_residuals(&residuals, &self.bank, lq, lp))
    }

    pub fn score_sentences(&self, claim: &Claim, article: &Article) -> Result<Vec<ScoredSentence>> {
        let c = self.encode_claim(claim)?;
        let a = self.encode_article(article)?;
        self.score_encoded(&c, &a)
    }

    /// Builds the prediction graph; `None` when the key set is empty.
    pub fn forward(
        &self,
        g: &mut Graph,
        claim: &EncodedText,
        article: &EncodedArticle,
        key: &KeySentenceSet,
    ) -> Result<Option<Var>> {
        if key.is_empty() {
            return Ok(None);
        }
        let uniform = 1.0 / key.sentences.len() as f64;
        let mut total: Option<Var> = None;
        for (sentence, &weight) in key.sentences.iter().zip(&key.weights) {
            let (_, enc) = article
                .sentences
                .iter()
                .find(|(i, _)| *i == sentence.index)
                .ok_or_else(|| Error::contract("key sentence missing from its article"))?;
            let pair = tokenize_pair_ids(&claim.ids, &enc.ids, self.model.config.max_len)?;
            let rot = self.model.encode_rot(g, &pair)?;
            let arp = self.model.encode_arp(g, &rot)?;
            let (q, s) = self.model.mean_pool(g, &arp)?;
            let v = if self.config.ablation.pattern_features() {
                let m = g.constant(Tensor::row_vector(self.bank.pattern(sentence.pattern).to_vec()));
                g.concat_cols(&[q, s, m])?
            } else {
                g.concat_cols(&[q, s])?
            };
            let w = if self.config.ablation.avg_pool { uniform } else { weight };
            let v = g.scale(v, w);
            total = Some(match total {
                Some(t) => g.add(t, v)?,
                None => v,
            });
        }
        let feature = total.ok_or_else(|| Error::contract("empty aggregation"))?;
        Ok(Some(self.model.predict_head(g, feature)?))
    }

    pub fn predict_encoded(&self, claim_id: &str, claim: &EncodedText, article: &EncodedArticle) -> Result<Prediction> {
        let scored = self.score_encoded(claim, article)?;
        let key = select_key_sentences(&scored, self.config.k2);
        let mut g = Graph::new(&self.model.store);
        let y_hat = match self.forward(&mut g, claim, article, &key)? {
            Some(y) => g.value(y).item()?,
            None => {
                log::warn!("article {} has no tokenizable sentence; scored 0", article.id);
                0.0
            }
        };
        Ok(Prediction {
            claim_id: claim_id.into(),
            article_id: article.id.clone(),
            y_hat,
            key_sentences: key,
            label: None,
        })
    }

    pub fn predict_article(&self, claim: &Claim, article: &Article) -> Result<Prediction> {
        let c = self.encode_claim(claim)?;
        let a = self.encode_article(article)?;
        self.predict_encoded(&claim.id, &c, &a)
    }

    /// Candidates ordered by descending prediction, ties to the smaller id.
    pub fn rerank(&self, claim: &Claim, candidates: &CandidateSet, articles: &ArticleLookup) -> Result<RankedResult> {
        let c = self.encode_claim(claim)?;
        let mut ranking = Vec::with_capacity(candidates.entries.len());
        for cand in &candidates.entries {
            let a = self.encode_article(articles.get(&cand.article_id)?)?;
            ranking.push(self.predict_encoded(&claim.id, &c, &a)?);
        }
        sort_predictions(&mut ranking);
        Ok(RankedResult {
            claim_id: claim.id.clone(),
            ranking,
        })
    }
}

pub fn sort_predictions(ranking: &mut [Prediction]) {
    ranking.sort_by(|a, b| b.y_hat.total_cmp(&a.y_hat).then_with(|| a.article_id.cmp(&b.article_id)));
}
