use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    select_key_sentences, sort_predictions, ArticleLookup, EncodedArticle, EncodedText,
    FeedbackMode, RankedResult, RankerConfig, Reranker,
};
use crate::corpus::{tokenize, tokenize_pair_ids, validate_articles, validate_claims, validate_labels};
use crate::corpus::{Article, Claim, RelevanceLabel, TokenSeq, Vocabulary};
use crate::encoder::{drift_penalty, rouge_regression, EncoderModel};
use crate::memory::{filter_valid, init_memory, residual, FeedbackLedger, MemoryBank, ResidualRecord};
use crate::metrics::{mrr, EvalItem};
use crate::retrieval::{index_articles, retrieve_candidates, Bm25Params, CandidateSet, InvertedIndex};
use crate::rouge::{rouge2, RougeTarget};
use crate::tensor::{Adam, AdamConfig, Gradients, Graph};
use crate::{Error, Result};

const SPLIT_STREAM: u64 = 0x5eed_0001;
const PRETRAIN_STREAM: u64 = 0x5eed_0002;
const KMEANS_STREAM: u64 = 0x5eed_0003;
const FIT_STREAM: u64 = 0x5eed_0004;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub claim_id: String,
    pub article_id: String,
    pub label: u8,
    /// 0-based stage-one rank; `None` for positives appended past the cutoff.
    pub stage1_rank: Option<usize>,
}

fn positive_set(labels: &[RelevanceLabel]) -> BTreeSet<(String, String)> {
    labels
        .iter()
        .filter(|l| l.label == 1)
        .map(|l| (l.claim_id.clone(), l.article_id.clone()))
        .collect()
}

/// The top-`k1` candidates of every claim, labelled, plus any positive that
/// stage one missed.
pub fn make_training_pairs<'c>(
    claims: impl IntoIterator<Item = &'c Claim>,
    labels: &[RelevanceLabel],
    index: &InvertedIndex,
    k1: usize,
    params: &Bm25Params,
) -> Vec<TrainingPair> {
    let positives = positive_set(labels);
    let mut pairs = Vec::new();
    for claim in claims {
        let cands = retrieve_candidates(claim, index, k1, params);
        let mine: Vec<&String> = positives
            .range((claim.id.clone(), String::new())..)
            .take_while(|(c, _)| *c == claim.id)
            .map(|(_, a)| a)
            .collect();
        if cands.entries.is_empty() && mine.is_empty() {
            log::warn!("claim {} has no candidates and no positives; dropped", claim.id);
            continue;
        }
        let mut seen = BTreeSet::new();
        for (rank, c) in cands.entries.iter().enumerate() {
            seen.insert(c.article_id.as_str());
            pairs.push(TrainingPair {
                claim_id: claim.id.clone(),
                article_id: c.article_id.clone(),
                label: u8::from(mine.contains(&&c.article_id)),
                stage1_rank: Some(rank),
            });
        }
        for a in mine {
            if !seen.contains(a.as_str()) {
                pairs.push(TrainingPair {
                    claim_id: claim.id.clone(),
                    article_id: a.clone(),
                    label: 1,
                    stage1_rank: None,
                });
            }
        }
    }
    pairs
}

/// Inputs shared by every training stage.
pub struct TrainingSet<'a> {
    pub train_claims: Vec<&'a Claim>,
    pub val_claims: Vec<&'a Claim>,
    pub articles: ArticleLookup<'a>,
    pub index: InvertedIndex,
    pub positives: BTreeSet<(String, String)>,
    pub pairs: Vec<TrainingPair>,
    pub val_candidates: Vec<CandidateSet>,
    claims_by_id: BTreeMap<&'a str, &'a Claim>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(
        claims: &'a [Claim],
        articles: &'a [Article],
        labels: &[RelevanceLabel],
        cfg: &RankerConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        validate_claims(claims)?;
        validate_articles(articles)?;
        validate_labels(labels, claims, articles)?;
        let index = index_articles(articles)?;

        let mut order: Vec<&Claim> = claims.iter().collect();
        order.shuffle(&mut rng_for(cfg.seed, SPLIT_STREAM));
        let n_val = (cfg.val_fraction * claims.len() as f64) as usize;
        let val_claims: Vec<&Claim> = order[..n_val].to_vec();
        let train_claims: Vec<&Claim> = order[n_val..].to_vec();

        let pairs = make_training_pairs(train_claims.iter().copied(), labels, &index, cfg.k1, &cfg.bm25);
        let val_candidates = val_claims
            .iter()
            .map(|c| retrieve_candidates(c, &index, cfg.k1, &cfg.bm25))
            .collect();
        Ok(TrainingSet {
            train_claims,
            val_claims,
            articles: ArticleLookup::new(articles),
            index,
            positives: positive_set(labels),
            pairs,
            val_candidates,
            claims_by_id: claims.iter().map(|c| (c.id.as_str(), c)).collect(),
        })
    }

    pub fn claim(&self, id: &str) -> Result<&'a Claim> {
        self.claims_by_id.get(id).copied().ok_or_else(|| Error::Lookup {
            kind: "claim",
            id: id.into(),
        })
    }

    pub fn is_positive(&self, claim_id: &str, article_id: &str) -> bool {
        self.positives.contains(&(claim_id.into(), article_id.into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub population: usize,
    pub train_pairs: usize,
    pub holdout_pairs: usize,
    /// Mean squared error per output on the held-out pairs.
    pub mse_before: f64,
    pub mse_after: f64,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankInit {
    pub residuals: usize,
    pub valid: usize,
    pub t_low: f64,
    pub t_high: f64,
    pub random: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub step_losses: Vec<f64>,
    pub mean_loss: f64,
    pub right: usize,
    pub wrong: usize,
    pub patterns_moved: usize,
    pub val_mrr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub pretrain: Option<PretrainReport>,
    pub bank: Option<BankInit>,
    pub train_claims: Vec<String>,
    pub val_claims: Vec<String>,
    pub training_pairs: usize,
    pub positive_weight: f64,
    pub epochs: Vec<EpochReport>,
    pub best_epoch: Option<usize>,
    /// Feedback collected in the kept epoch.
    pub feedback: Option<FeedbackLedger>,
}

impl TrainingLog {
    pub fn new(set: &TrainingSet) -> Self {
        TrainingLog {
            pretrain: None,
            bank: None,
            train_claims: set.train_claims.iter().map(|c| c.id.clone()).collect(),
            val_claims: set.val_claims.iter().map(|c| c.id.clone()).collect(),
            training_pairs: set.pairs.len(),
            positive_weight: 1.0,
            epochs: Vec::new(),
            best_epoch: None,
            feedback: None,
        }
    }
}

/// Fresh model sized for `vocab` and the configured ablation.
pub fn new_model(cfg: &RankerConfig, vocab: &Vocabulary) -> Result<EncoderModel> {
    let mut enc = cfg.encoder;
    enc.vocab_size = vocab.len();
    EncoderModel::new(enc, cfg.head_input(), cfg.seed)
}

struct RougeSample {
    seq: TokenSeq,
    target: RougeTarget,
}

fn rouge_mse(model: &EncoderModel, samples: &[RougeSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let mut g = Graph::new(&model.store);
        let enc = model.encode_rot(&mut g, &s.seq)?;
        let r = model.rouge_head(&mut g, &enc)?;
        let e = rouge_regression(&mut g, r, s.target)?;
        total += g.value(e).item()?;
    }
    Ok(total / (2 * samples.len()) as f64)
}

/// Fits the ROT block, embeddings and ROUGE head to ROUGE-2 targets on
/// claim/sentence pairs from the training candidates, with a drift penalty
/// towards the starting weights.
pub fn pretrain_rot(
    model: &mut EncoderModel,
    vocab: &Vocabulary,
    set: &TrainingSet,
    cfg: &RankerConfig,
) -> Result<PretrainReport> {
    let mut claim_tokens: BTreeMap<&str, (Vec<String>, Vec<u32>)> = BTreeMap::new();
    for claim in &set.train_claims {
        claim_tokens.insert(claim.id.as_str(), (tokenize(&claim.text), vocab.encode(&claim.text)));
    }
    // (pair, sentence, target) for every sentence with at least one known token.
    let mut population = Vec::new();
    for (p, pair) in set.pairs.iter().enumerate() {
        let (q_tokens, _) = claim_tokens
            .get(pair.claim_id.as_str())
            .ok_or_else(|| Error::contract(format!("unknown training claim {}", pair.claim_id)))?;
        let article = set.articles.get(&pair.article_id)?;
        for (s, sentence) in article.sentences.iter().enumerate() {
            if vocab.encode(&sentence.text).is_empty() {
                continue;
            }
            population.push((p, s, rouge2(q_tokens, &tokenize(&sentence.text))));
        }
    }
    let mut rng = rng_for(cfg.seed, PRETRAIN_STREAM);
    let total = population.len();
    if total > cfg.pretrain.max_pairs {
        // Overlapping pairs are rare; keep a fixed share of them so the
        // regression sees more than the all-zero target.
        let (overlap, disjoint): (Vec<usize>, Vec<usize>) =
            (0..total).partition(|&i| population[i].2.recall > 0.0);
        let want = libm::round(cfg.pretrain.overlap_fraction * cfg.pretrain.max_pairs as f64) as usize;
        let n_overlap = want.min(overlap.len()).max(cfg.pretrain.max_pairs.saturating_sub(disjoint.len()));
        let n_disjoint = cfg.pretrain.max_pairs - n_overlap;
        let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, overlap.len(), n_overlap)
            .into_iter()
            .map(|i| overlap[i])
            .chain(
                rand::seq::index::sample(&mut rng, disjoint.len(), n_disjoint)
                    .into_iter()
                    .map(|i| disjoint[i]),
            )
            .collect();
        keep.sort_unstable();
        population = keep.into_iter().map(|i| population[i]).collect();
    }
    population.shuffle(&mut rng);

    let mut samples = Vec::with_capacity(population.len());
    for (p, s, target) in population {
        let pair = &set.pairs[p];
        let q_ids = &claim_tokens[pair.claim_id.as_str()].1;
        let sentence = &set.articles.get(&pair.article_id)?.sentences[s].text;
        samples.push(RougeSample {
            seq: tokenize_pair_ids(q_ids, &vocab.encode(sentence), model.config.max_len)?,
            target,
        });
    }
    let n_hold = libm::ceil(cfg.pretrain.holdout_fraction * samples.len() as f64) as usize;
    let (holdout, train) = samples.split_at(n_hold.min(samples.len()));

    let mut trainable = model.rot_param_ids();
    trainable.extend(model.rouge_head_ids());
    model.set_trainable_only(&trainable);
    let rot = model.rot_param_ids();
    model.store.take_snapshot(&rot);

    let mse_before = rouge_mse(model, holdout)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.pretrain.lr,
        ..cfg.adam
    });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.pretrain.epochs);
    for _ in 0..cfg.pretrain.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.pretrain.batch_size) {
            let mut grads = Gradients::zeros_for(&model.store);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut g = Graph::new(&model.store);
                let enc = model.encode_rot(&mut g, &train[i].seq)?;
                let r = model.rouge_head(&mut g, &enc)?;
                let loss = rouge_regression(&mut g, r, train[i].target)?;
                epoch_loss += g.value(loss).item()?;
                let loss = g.scale(loss, inv);
                g.backward(loss, &mut grads)?;
            }
            let mut g = Graph::new(&model.store);
            let penalty = drift_penalty(&mut g, cfg.lambda_r)?;
            g.backward(penalty, &mut grads)?;
            drop(g);
            adam.step(&mut model.store, &grads)?;
        }
        epoch_losses.push(epoch_loss / train.len().max(1) as f64);
    }
    let mse_after = rouge_mse(model, holdout)?;
    model.store.clear_snapshot();
    model.set_trainable_only(&[]);
    Ok(PretrainReport {
        population: total,
        train_pairs: train.len(),
        holdout_pairs: holdout.len(),
        mse_before,
        mse_after,
        epoch_losses,
    })
}

/// Residuals of training claims against the sentences of their relevant
/// articles, filtered by norm and clustered into the initial bank.
pub fn init_bank(
    model: &EncoderModel,
    vocab: &Vocabulary,
    set: &TrainingSet,
    cfg: &RankerConfig,
) -> Result<(MemoryBank, BankInit)> {
    let mut records = Vec::new();
    for claim in &set.train_claims {
        let q_ids = vocab.encode(&claim.text);
        let q = model.avg_embedding_ids(&q_ids)?;
        let mine = set
            .positives
            .range((claim.id.clone(), String::new())..)
            .take_while(|(c, _)| *c == claim.id);
        for (_, article_id) in mine {
            for s in &set.articles.get(article_id)?.sentences {
                let ids = vocab.encode(&s.text);
                if ids.is_empty() {
                    continue;
                }
                let r = residual(&q, &model.avg_embedding_ids(&ids)?)?;
                records.push(ResidualRecord::new(claim.id.clone(), article_id.clone(), s.index, r));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::config("no residuals: training claims have no relevant articles"));
    }
    let (t_low, t_high) = cfg.threshold.resolve(&records)?;
    let valid = filter_valid(&records, t_low, t_high)?;
    if valid.len() < cfg.patterns {
        return Err(Error::config(format!(
            "{} valid residuals for K = {}; lower K or widen the residual band",
            valid.len(),
            cfg.patterns
        )));
    }
    let seed = cfg.seed ^ KMEANS_STREAM;
    let bank = if cfg.ablation.rand_mem_init {
        let mean_norm = valid.iter().map(|r| r.norm).sum::<f64>() / valid.len() as f64;
        MemoryBank::random(cfg.patterns, model.config.dim, mean_norm, seed)?
    } else {
        init_memory(&valid, cfg.patterns, seed)?
    };
    Ok((
        bank,
        BankInit {
            residuals: records.len(),
            valid: valid.len(),
            t_low,
            t_high,
            random: cfg.ablation.rand_mem_init,
        },
    ))
}

struct Encoded {
    claims: BTreeMap<String, EncodedText>,
    articles: BTreeMap<String, EncodedArticle>,
}

impl Encoded {
    fn claim(&self, id: &str) -> Result<&EncodedText> {
        self.claims.get(id).ok_or_else(|| Error::Lookup {
            kind: "claim",
            id: id.into(),
        })
    }

    fn article(&self, id: &str) -> Result<&EncodedArticle> {
        self.articles.get(id).ok_or_else(|| Error::Lookup {
            kind: "article",
            id: id.into(),
        })
    }
}

fn encode_all(reranker: &Reranker, set: &TrainingSet) -> Result<Encoded> {
    let mut claims = BTreeMap::new();
    for c in set.train_claims.iter().chain(&set.val_claims) {
        claims.insert(c.id.clone(), reranker.encode_claim(c)?);
    }
    let mut needed: BTreeSet<&str> = set.pairs.iter().map(|p| p.article_id.as_str()).collect();
    needed.extend(set.val_candidates.iter().flat_map(|c| c.entries.iter().map(|e| e.article_id.as_str())));
    let mut articles = BTreeMap::new();
    for id in needed {
        articles.insert(id.into(), reranker.encode_article(set.articles.get(id)?)?);
    }
    Ok(Encoded { claims, articles })
}

fn validation_mrr(reranker: &Reranker, set: &TrainingSet, enc: &Encoded) -> Result<Option<f64>> {
    let mut items = Vec::new();
    for cands in &set.val_candidates {
        let relevant: BTreeSet<String> = cands
            .entries
            .iter()
            .filter(|c| set.is_positive(&cands.claim_id, &c.article_id))
            .map(|c| c.article_id.clone())
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let claim = enc.claim(&cands.claim_id)?;
        let mut ranking = Vec::with_capacity(cands.entries.len());
        for c in &cands.entries {
            ranking.push(reranker.predict_encoded(&cands.claim_id, claim, enc.article(&c.article_id)?)?);
        }
        sort_predictions(&mut ranking);
        let result = RankedResult {
            claim_id: cands.claim_id.clone(),
            ranking,
        };
        items.push(EvalItem {
            claim_id: result.claim_id,
            ranking: result.ranking.into_iter().map(|p| p.article_id).collect(),
            relevant,
        });
    }
    if items.is_empty() {
        return Ok(None);
    }
    mrr(&items).map(Some)
}

/// The relevance-prediction stage: the ROT block, ARP layers and prediction
/// head are trained on the labelled pairs while embeddings stay frozen; the
/// memory bank moves once per epoch. Keeps the state with the best
/// validation MRR.
pub fn fit(reranker: &mut Reranker, set: &TrainingSet, log: &mut TrainingLog) -> Result<()> {
    let cfg = reranker.config.clone();
    let enc = encode_all(reranker, set)?;
    // Embedding tables stay frozen so residuals keep their meaning across
    // epochs; the ROT block is fine-tuned along with ARP.
    let mut trainable = reranker.model.rot_block_ids();
    trainable.extend(reranker.model.arp_param_ids());
    reranker.model.set_trainable_only(&trainable);

    let positives = set.pairs.iter().filter(|p| p.label == 1).count();
    let negatives = set.pairs.len() - positives;
    if positives == 0 && cfg.epochs > 0 {
        return Err(Error::validation("no positive training pairs"));
    }
    let pos_weight = (negatives as f64 / positives.max(1) as f64).clamp(1.0, cfg.positive_weight_cap);
    log.positive_weight = pos_weight;

    let mut rng = rng_for(cfg.seed, FIT_STREAM);
    let mut adam = Adam::new(cfg.adam);
    let mut order: Vec<usize> = (0..set.pairs.len()).collect();
    let mut best: Option<(f64, usize, EncoderModel, MemoryBank, FeedbackLedger)> = None;
    let mut since_best = 0usize;
    let mut last_feedback = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut ledger = FeedbackLedger::new(reranker.bank.k());
        let mut step_losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_for(&reranker.model.store);
            let inv = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let pair = &set.pairs[i];
                let claim = enc.claim(&pair.claim_id)?;
                let article = enc.article(&pair.article_id)?;
                let scored = reranker.score_encoded(claim, article)?;
                let key = select_key_sentences(&scored, cfg.k2);
                let mut g = Graph::new(&reranker.model.store);
                let Some(y) = reranker.forward(&mut g, claim, article, &key)? else {
                    continue;
                };
                let y_hat = g.value(y).item()?;
                let w = if pair.label == 1 { pos_weight } else { 1.0 };
                let loss = g.bce(y, f64::from(pair.label))?;
                batch_loss += w * inv * g.value(loss).item()?;
                let loss = g.scale(loss, w * inv);
                g.backward(loss, &mut grads)?;

                let take = match cfg.feedback {
                    FeedbackMode::TopOne => 1,
                    FeedbackMode::AllKeySentences => key.sentences.len(),
                };
                for s in key.sentences.iter().take(take) {
                    let record =
                        ResidualRecord::new(pair.claim_id.clone(), pair.article_id.clone(), s.index, s.residual.clone());
                    ledger.record(&reranker.bank, record, y_hat, pair.label);
                }
            }
            adam.step(&mut reranker.model.store, &grads)?;
            step_losses.push(batch_loss);
        }
        let right = ledger.patterns.iter().map(|p| p.right.len()).sum();
        let wrong = ledger.patterns.iter().map(|p| p.wrong.len()).sum();
        let (feedback, moved) = if cfg.ablation.no_mem_update || cfg.ablation.no_pmb {
            (ledger, 0)
        } else {
            let up = reranker.bank.epoch_update(&mut ledger, cfg.lambda_m)?;
            let moved = up.updates.iter().filter(|u| u.as_ref().is_some_and(|u| u.applied)).count();
            (up.feedback, moved)
        };
        let val_mrr = validation_mrr(reranker, set, &enc)?;
        let mean_loss = step_losses.iter().sum::<f64>() / step_losses.len().max(1) as f64;
        log::info!("epoch {epoch}: loss {mean_loss:.4}, validation MRR {val_mrr:?}");
        log.epochs.push(EpochReport {
            epoch,
            step_losses,
            mean_loss,
            right,
            wrong,
            patterns_moved: moved,
            val_mrr,
        });

        match val_mrr {
            Some(v) if best.as_ref().map_or(true, |b| v > b.0) => {
                best = Some((v, epoch, reranker.model.clone(), reranker.bank.clone(), feedback));
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                last_feedback = Some(feedback);
                if since_best >= cfg.patience {
                    break;
                }
            }
            None => last_feedback = Some(feedback),
        }
    }
    reranker.model.set_trainable_only(&[]);
    if let Some((_, epoch, model, bank, feedback)) = best {
        reranker.model = model;
        reranker.model.set_trainable_only(&[]);
        reranker.bank = bank;
        log.best_epoch = Some(epoch);
        log.feedback = Some(feedback);
    } else {
        log.best_epoch = log.epochs.last().map(|e| e.epoch);
        log.feedback = last_feedback;
    }
    Ok(())
}

/// The whole procedure: pretrain ROT, initialize the bank from its
/// embeddings, then train relevance prediction.
pub fn train(
    claims: &[Claim],
    articles: &[Article],
    labels: &[RelevanceLabel],
    vocab: Vocabulary,
    cfg: &RankerConfig,
) -> Result<(Reranker, TrainingLog)> {
    let set = TrainingSet::new(claims, articles, labels, cfg)?;
    let mut log = TrainingLog::new(&set);
    let mut model = new_model(cfg, &vocab)?;
    if !cfg.ablation.no_rouge {
        log.pretrain = Some(pretrain_rot(&mut model, &vocab, &set, cfg)?);
    }
    let (bank, init) = init_bank(&model, &vocab, &set, cfg)?;
    log.bank = Some(init);
    let mut reranker = Reranker::new(cfg.clone(), vocab, model, bank)?;
    fit(&mut reranker, &set, &mut log)?;
    Ok((reranker, log))
}
