//! Miniature transformer encoder.
//!
//! A shared embedding layer feeds a one-block ROT encoder whose `[CLS]`
//! output regresses ROUGE-2 precision/recall. Its token outputs feed the ARP
//! stack, whose outputs are mean-pooled per segment. The prediction head used
//! by the ranker lives here as well so every trainable tensor sits in one
//! [`ParameterStore`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSeq, Vocabulary};
use crate::rouge::RougeTarget;
use crate::tensor::{Graph, ParamId, ParameterStore, Tensor, Var};
use crate::{math, Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub arp_layers: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ffn_mult: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            heads: 4,
            arp_layers: 2,
            max_len: 128,
            vocab_size: 0,
            ffn_mult: 4,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.arp_layers == 0 {
            return Err(Error::config("arp_layers must be at least 1"));
        }
        if self.max_len < 8 {
            return Err(Error::config("max_len must be at least 8"));
        }
        if self.vocab_size <= Vocabulary::FIRST_TOKEN as usize {
            return Err(Error::config("vocab_size must exceed the reserved ids"));
        }
        if self.ffn_mult == 0 {
            return Err(Error::config("ffn_mult must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct BlockParams {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl BlockParams {
    fn ids(&self) -> [ParamId; 16] {
        [
            self.ln1_gain,
            self.ln1_bias,
            self.wq,
            self.bq,
            self.wk,
            self.bk,
            self.wv,
            self.bv,
            self.wo,
            self.bo,
            self.ln2_gain,
            self.ln2_bias,
            self.w1,
            self.b1,
            self.w2,
            self.b2,
        ]
    }
}

/// Two-layer perceptron with a sigmoid output.
#[derive(Debug, Clone, PartialEq)]
struct HeadParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl HeadParams {
    fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Output of an encoder stack for one claim/sentence pair.
#[derive(Debug, Clone)]
pub struct PairEncoding {
    /// Token outputs, `seq_len x dim`; row 0 is `[CLS]`.
    pub z: Var,
    pub seq: TokenSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub store: ParameterStore,
    token_emb: ParamId,
    pos_emb: ParamId,
    seg_emb: ParamId,
    rot: BlockParams,
    arp: Vec<BlockParams>,
    arp_norm: (ParamId, ParamId),
    rouge_head: HeadParams,
    pred_head: HeadParams,
}

struct Init<'a> {
    store: &'a mut ParameterStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        self.store.add(name, Tensor::new(rows, cols, data)?)
    }

    fn linear(&mut self, name: String, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
        self.uniform(name, fan_in, fan_out, bound)
    }

    fn fill(&mut self, name: String, cols: usize, v: f64) -> Result<ParamId> {
        self.store.add(name, Tensor::filled(1, cols, v))
    }

    fn block(&mut self, prefix: &str, dim: usize, hidden: usize) -> Result<BlockParams> {
        let wq = self.linear(format!("{prefix}.attn.wq"), dim, dim)?;
        Ok(BlockParams {
            ln1_gain: self.fill(format!("{prefix}.ln1.gain"), dim, 1.0)?,
            ln1_bias: self.fill(format!("{prefix}.ln1.bias"), dim, 0.0)?,
            wq,
            bq: self.fill(format!("{prefix}.attn.bq"), dim, 0.0)?,
            wk: {
                // Keys start equal to queries, so initial attention favours
                // identical tokens.
                let wq = self.store.value(wq).clone();
                self.store.add(format!("{prefix}.attn.wk"), wq)?
            },
            bk: self.fill(format!("{prefix}.attn.bk"), dim, 0.0)?,
            wv: self.linear(format!("{prefix}.attn.wv"), dim, dim)?,
            bv: self.fill(format!("{prefix}.attn.bv"), dim, 0.0)?,
            wo: self.linear(format!("{prefix}.attn.wo"), dim, dim)?,
            bo: self.fill(format!("{prefix}.attn.bo"), dim, 0.0)?,
            ln2_gain: self.fill(format!("{prefix}.ln2.gain"), dim, 1.0)?,
            ln2_bias: self.fill(format!("{prefix}.ln2.bias"), dim, 0.0)?,
            w1: self.linear(format!("{prefix}.ffn.w1"), dim, hidden)?,
            b1: self.fill(format!("{prefix}.ffn.b1"), hidden, 0.0)?,
            w2: self.linear(format!("{prefix}.ffn.w2"), hidden, dim)?,
            b2: self.fill(format!("{prefix}.ffn.b2"), dim, 0.0)?,
        })
    }

    fn head(&mut self, prefix: &str, input: usize, hidden: usize, out: usize) -> Result<HeadParams> {
        Ok(HeadParams {
            w1: self.linear(format!("{prefix}.w1"), input, hidden)?,
            b1: self.fill(format!("{prefix}.b1"), hidden, 0.0)?,
            w2: self.linear(format!("{prefix}.w2"), hidden, out)?,
            b2: self.fill(format!("{prefix}.b2"), out, 0.0)?,
        })
    }
}

impl EncoderModel {
    /// Randomly initialized model. `head_input` is the width of the feature
    /// vector fed to the prediction head (`3 * dim` with pattern vectors,
    /// `2 * dim` without).
    pub fn new(config: EncoderConfig, head_input: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParameterStore::new();
        let dim = config.dim;
        let hidden = config.ffn_mult * dim;
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let token_emb = init.uniform("emb.token".into(), config.vocab_size, dim, 0.5)?;
        let pos_emb = init.store.add("emb.position", Tensor::zeros(config.max_len, dim))?;
        let seg_emb = init.uniform("emb.segment".into(), 2, dim, 0.5)?;
        let rot = init.block("rot", dim, hidden)?;
        let arp = (0..config.arp_layers)
            .map(|i| init.block(&format!("arp.{i}"), dim, hidden))
            .collect::<Result<Vec<_>>>()?;
        let arp_norm = (
            init.fill("arp.ln_f.gain".into(), dim, 1.0)?,
            init.fill("arp.ln_f.bias".into(), dim, 0.0)?,
        );
        let rouge_head = init.head("rouge_head", dim, dim, 2)?;
        let pred_head = init.head("pred_head", head_input, dim, 1)?;
        Ok(EncoderModel {
            config,
            store,
            token_emb,
            pos_emb,
            seg_emb,
            rot,
            arp,
            arp_norm,
            rouge_head,
            pred_head,
        })
    }

    pub fn head_input(&self) -> usize {
        self.store.value(self.pred_head.w1).rows()
    }

    pub fn token_embedding_id(&self) -> ParamId {
        self.token_emb
    }

    /// Embedding tables and the ROT block.
    pub fn rot_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.token_emb, self.pos_emb, self.seg_emb];
        ids.extend(self.rot.ids());
        ids
    }

    /// The ROT block alone, without the embedding tables.
    pub fn rot_block_ids(&self) -> Vec<ParamId> {
        self.rot.ids().to_vec()
    }

    pub fn rouge_head_ids(&self) -> Vec<ParamId> {
        self.rouge_head.ids().to_vec()
    }

    /// ARP blocks and the prediction head.
    pub fn arp_param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.arp.iter().flat_map(|b| b.ids()).collect();
        ids.extend([self.arp_norm.0, self.arp_norm.1]);
        ids.extend(self.pred_head.ids());
        ids
    }

    /// Marks exactly `ids` as trainable.
    pub fn set_trainable_only(&mut self, ids: &[ParamId]) {
        let all: Vec<ParamId> = self.store.ids().collect();
        for id in all {
            self.store.set_trainable(id, ids.contains(&id));
        }
    }

    fn check_len(&self, pair: &TokenSeq) -> Result<()> {
        if pair.len() > self.config.max_len {
            return Err(Error::contract(format!(
                "pair of {} tokens exceeds max_len {}",
                pair.len(),
                self.config.max_len
            )));
        }
        if pair.ids.iter().any(|&id| id as usize >= self.config.vocab_size) {
            return Err(Error::contract("token id outside the vocabulary"));
        }
        Ok(())
    }

    fn block(&self, g: &mut Graph, x: Var, p: &BlockParams) -> Result<Var> {
        let heads = self.config.heads;
        let head_dim = self.config.dim / heads;
        let scale = 1.0 / math::sqrt(head_dim as f64);

        let (g1, b1) = (g.param(p.ln1_gain), g.param(p.ln1_bias));
        let h = g.layer_norm(x, g1, b1, LAYER_NORM_EPS)?;
        let project = |g: &mut Graph, w: ParamId, b: ParamId| -> Result<Var> {
            let (wv, bv) = (g.param(w), g.param(b));
            let y = g.matmul(h, wv)?;
            g.add_row(y, bv)
        };
        let q = project(g, p.wq, p.bq)?;
        let k = project(g, p.wk, p.bk)?;
        let v = project(g, p.wv, p.bv)?;
        let mut outs = Vec::with_capacity(heads);
        for head in 0..heads {
            let qh = g.slice_cols(q, head * head_dim, head_dim)?;
            let kh = g.slice_cols(k, head * head_dim, head_dim)?;
            let vh = g.slice_cols(v, head * head_dim, head_dim)?;
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores);
            outs.push(g.matmul(attn, vh)?);
        }
        let attn = g.concat_cols(&outs)?;
        let (wo, bo) = (g.param(p.wo), g.param(p.bo));
        let attn = g.matmul(attn, wo)?;
        let attn = g.add_row(attn, bo)?;
        let x = g.add(x, attn)?;

        let (g2, b2) = (g.param(p.ln2_gain), g.param(p.ln2_bias));
        let h = g.layer_norm(x, g2, b2, LAYER_NORM_EPS)?;
        let (w1, bb1) = (g.param(p.w1), g.param(p.b1));
        let f = g.matmul(h, w1)?;
        let f = g.add_row(f, bb1)?;
        let f = g.gelu(f);
        let (w2, bb2) = (g.param(p.w2), g.param(p.b2));
        let f = g.matmul(f, w2)?;
        let f = g.add_row(f, bb2)?;
        g.add(x, f)
    }

    /// Token, position and segment embeddings through the ROT block.
    pub fn encode_rot(&self, g: &mut Graph, pair: &TokenSeq) -> Result<PairEncoding> {
        self.check_len(pair)?;
        let tokens = g.embedding(self.token_emb, &pair.ids)?;
        let positions: Vec<u32> = (0..pair.len() as u32).collect();
        let pos = g.embedding(self.pos_emb, &positions)?;
        let x = g.add(tokens, pos)?;
        let segments: Vec<u32> = pair.segments.iter().map(|&s| u32::from(s)).collect();
        let seg = g.embedding(self.seg_emb, &segments)?;
        let x = g.add(x, seg)?;
        let z = self.block(g, x, &self.rot)?;
        Ok(PairEncoding {
            z,
            seq: pair.clone(),
        })
    }

    fn head(&self, g: &mut Graph, x: Var, p: &HeadParams) -> Result<Var> {
        let (w1, b1, w2, b2) = (g.param(p.w1), g.param(p.b1), g.param(p.w2), g.param(p.b2));
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.gelu(h);
        let y = g.matmul(h, w2)?;
        let y = g.add_row(y, b2)?;
        Ok(g.sigmoid(y))
    }

    /// Predicted ROUGE-2 `(precision, recall)` from the `[CLS]` output, `1 x 2`.
    pub fn rouge_head(&self, g: &mut Graph, enc: &PairEncoding) -> Result<Var> {
        let cls = g.mean_rows(enc.z, &[0])?;
        self.head(g, cls, &self.rouge_head)
    }

    /// The ARP interaction stack applied to ROT outputs, with a final
    /// layer norm since the blocks are pre-norm.
    pub fn encode_arp(&self, g: &mut Graph, enc: &PairEncoding) -> Result<PairEncoding> {
        let mut z = enc.z;
        for block in &self.arp {
            z = self.block(g, z, block)?;
        }
        let (gain, bias) = (g.param(self.arp_norm.0), g.param(self.arp_norm.1));
        let z = g.layer_norm(z, gain, bias, LAYER_NORM_EPS)?;
        Ok(PairEncoding {
            z,
            seq: enc.seq.clone(),
        })
    }

    /// Mean of the claim-token outputs and of the sentence-token outputs.
    /// Special tokens are excluded.
    pub fn mean_pool(&self, g: &mut Graph, enc: &PairEncoding) -> Result<(Var, Var)> {
        let nq = enc.seq.claim_len();
        let ns = enc.seq.sentence_len();
        if nq == 0 || ns == 0 {
            return Err(Error::contract(format!(
                "cannot pool an empty segment (claim {nq}, sentence {ns} tokens)"
            )));
        }
        let claim_rows: Vec<usize> = (1..=nq).collect();
        let sent_rows: Vec<usize> = (nq + 2..nq + 2 + ns).collect();
        Ok((g.mean_rows(enc.z, &claim_rows)?, g.mean_rows(enc.z, &sent_rows)?))
    }

    /// Relevance probability `1 x 1` from an aggregated feature row.
    pub fn predict_head(&self, g: &mut Graph, feature: Var) -> Result<Var> {
        self.head(g, feature, &self.pred_head)
    }

    /// Mean of token-embedding rows; no positions, no attention.
    pub fn avg_embedding_ids(&self, ids: &[u32]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::contract("average embedding of zero tokens"));
        }
        let table = self.store.value(self.token_emb);
        let mut out = vec![0.0; self.config.dim];
        for &id in ids {
            if id as usize >= table.rows() {
                return Err(Error::contract("token id outside the vocabulary"));
            }
            for (o, v) in out.iter_mut().zip(table.row(id as usize)) {
                *o += v;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(out)
    }

    pub fn avg_token_embedding(&self, text: &str, vocab: &Vocabulary) -> Result<Vec<f64>> {
        self.avg_embedding_ids(&vocab.encode(text))
    }
}

/// `||r_hat - r||^2` for one pair.
pub fn rouge_regression(g: &mut Graph, r_hat: Var, target: RougeTarget) -> Result<Var> {
    let t = g.constant(Tensor::row_vector(target.as_array().to_vec()));
    g.squared_error(r_hat, t)
}

/// `lambda * sum ||theta - theta_0||^2` over the parameters covered by the
/// store's snapshot.
pub fn drift_penalty(g: &mut Graph, lambda: f64) -> Result<Var> {
    let store = g.store();
    if !store.has_snapshot() {
        return Err(Error::contract("drift penalty needs a parameter snapshot"));
    }
    let mut total: Option<Var> = None;
    for id in store.snapshot_ids() {
        let snap = store.snapshot(id).cloned().unwrap_or_else(|| Tensor::zeros(1, 1));
        let p = g.param(id);
        let s = g.constant(snap);
        let d = g.squared_error(p, s)?;
        total = Some(match total {
            Some(t) => g.add(t, d)?,
            None => d,
        });
    }
    let total = total.ok_or_else(|| Error::contract("empty snapshot"))?;
    Ok(g.scale(total, lambda))
}

/// ROT pretraining loss for one pair: regression error plus drift penalty.
pub fn rot_pretrain_loss(g: &mut Graph, r_hat: Var, target: RougeTarget, lambda: f64) -> Result<Var> {
    let reg = rouge_regression(g, r_hat, target)?;
    let drift = drift_penalty(g, lambda)?;
    g.add(reg, drift)
}

#[cfg(test)]
mod tests;
