//! Pattern memory bank.
//!
//! Residual embeddings (mean sentence embedding minus mean claim embedding)
//! inside a norm band are clustered into `K` pattern vectors. After every
//! epoch each pattern is pulled towards residuals it helped classify
//! correctly and pushed away from those it got wrong.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{l2_norm, sq_dist, sqrt};
use crate::{Error, Result};

mod kmeans;

pub use kmeans::{kmeans, KMeansResult, MAX_ITERATIONS};

/// Below this norm the update direction is treated as zero.
pub const ZERO_DIRECTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub claim_id: String,
    pub article_id: String,
    pub sentence_index: usize,
    pub r: Vec<f64>,
    pub norm: f64,
}

impl ResidualRecord {
    pub fn new(
        claim_id: impl Into<String>,
        article_id: impl Into<String>,
        sentence_index: usize,
        r: Vec<f64>,
    ) -> Self {
        let norm = l2_norm(&r);
        ResidualRecord {
            claim_id: claim_id.into(),
            article_id: article_id.into(),
            sentence_index,
            r,
            norm,
        }
    }
}

/// `s - q`.
pub fn residual(q: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    if q.len() != s.len() {
        return Err(Error::dim("residual", format!("{} vs {}", q.len(), s.len())));
    }
    Ok(s.iter().zip(q).map(|(a, b)| a - b).collect())
}

/// Records with `t_low < norm < t_high`, in input order.
pub fn filter_valid(records: &[ResidualRecord], t_low: f64, t_high: f64) -> Result<Vec<ResidualRecord>> {
    if !(t_low < t_high) {
        return Err(Error::config(format!(
            "residual band needs t_low < t_high, got {t_low} and {t_high}"
        )));
    }
    Ok(records
        .iter()
        .filter(|r| r.norm > t_low && r.norm < t_high)
        .cloned()
        .collect())
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn compute_thresholds(records: &[ResidualRecord], q_low: f64, q_high: f64) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::contract("thresholds of an empty residual set"));
    }
    if !(0.0 <= q_low && q_low < q_high && q_high <= 1.0) {
        return Err(Error::config(format!(
            "quantiles must satisfy 0 <= low < high <= 1, got {q_low} and {q_high}"
        )));
    }
    let mut norms: Vec<f64> = records.iter().map(|r| r.norm).collect();
    norms.sort_by(f64::total_cmp);
    Ok((quantile(&norms, q_low), quantile(&norms, q_high)))
}

/// How the residual norm band is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdRule {
    Quantile { low: f64, high: f64 },
    Absolute { low: f64, high: f64 },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Quantile { low: 0.45, high: 0.55 }
    }
}

impl ThresholdRule {
    pub fn resolve(&self, records: &[ResidualRecord]) -> Result<(f64, f64)> {
        match *self {
            ThresholdRule::Quantile { low, high } => compute_thresholds(records, low, high),
            ThresholdRule::Absolute { low, high } => Ok((low, high)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    patterns: Vec<Vec<f64>>,
    epoch: usize,
}

impl MemoryBank {
    pub fn from_patterns(patterns: Vec<Vec<f64>>, epoch: usize) -> Result<Self> {
        let Some(first) = patterns.first() else {
            return Err(Error::contract("memory bank needs at least one pattern"));
        };
        let dim = first.len();
        if patterns.iter().any(|p| p.len() != dim) {
            return Err(Error::dim("memory bank", "patterns of unequal length"));
        }
        if patterns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("non-finite pattern vector"));
        }
        Ok(MemoryBank { patterns, epoch })
    }

    /// Uniform random directions scaled to `norm`.
    pub fn random(k: usize, dim: usize, norm: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patterns = (0..k)
            .map(|_| {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = l2_norm(&v).max(f64::MIN_POSITIVE);
                v.iter_mut().for_each(|x| *x *= norm / n);
                v
            })
            .collect();
        MemoryBank::from_patterns(patterns, 0)
    }

    pub fn patterns(&self) -> &[Vec<f64>] {
        &self.patterns
    }

    pub fn pattern(&self, i: usize) -> &[f64] {
        &self.patterns[i]
    }

    pub fn k(&self) -> usize {
        self.patterns.len()
    }

    pub fn dim(&self) -> usize {
        self.patterns[0].len()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Index and Euclidean distance of the closest pattern; ties go to the
    /// lowest index.
    pub fn nearest_pattern(&self, r: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, m) in self.patterns.iter().enumerate() {
            let d = sq_dist(m, r);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, sqrt(best.1))
    }

    /// Applies the accumulated feedback, advances the epoch counter and
    /// drains the ledger. The drained ledger is returned with the per-pattern
    /// updates.
    pub fn epoch_update(&mut self, ledger: &mut FeedbackLedger, lambda_m: f64) -> Result<EpochUpdate> {
        if ledger.patterns.len() != self.k() {
            return Err(Error::contract(format!(
                "ledger has {} slots for {} patterns",
                ledger.patterns.len(),
                self.k()
            )));
        }
        let mut updates = Vec::with_capacity(self.k());
        for (i, fb) in ledger.patterns.iter().enumerate() {
            if fb.right.is_empty() && fb.wrong.is_empty() {
                updates.push(None);
                continue;
            }
            let right: Vec<(&[f64], f64)> = fb.right.iter().map(|e| (&e.record.r[..], e.weight)).collect();
            let wrong: Vec<(&[f64], f64)> = fb.wrong.iter().map(|e| (&e.record.r[..], e.weight)).collect();
            let up = update_pattern(&self.patterns[i], &right, &wrong, lambda_m)?;
            self.patterns[i] = up.m_new.clone();
            updates.push(Some(up));
        }
        self.epoch += 1;
        let feedback = core::mem::replace(ledger, FeedbackLedger::new(self.k()));
        Ok(EpochUpdate { updates, feedback })
    }
}

/// K-means over the residual vectors; centroids become the patterns.
pub fn init_memory(valid: &[ResidualRecord], k: usize, seed: u64) -> Result<MemoryBank> {
    if valid.len() < k {
        return Err(Error::config(format!(
            "{} valid residuals for K = {k}; lower K or widen the residual band",
            valid.len()
        )));
    }
    let points: Vec<Vec<f64>> = valid.iter().map(|r| r.r.clone()).collect();
    let result = kmeans(&points, k, seed, MAX_ITERATIONS)?;
    MemoryBank::from_patterns(result.centroids, 0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternUpdate {
    pub m_new: Vec<f64>,
    pub u_right: Vec<f64>,
    pub u_wrong: Vec<f64>,
    pub w_right: f64,
    pub w_wrong: f64,
    pub direction: Vec<f64>,
    /// False when the total weight or the direction vanished.
    pub applied: bool,
}

/// One pattern's move from right (`R`) and wrong (`W`) feedback, given as
/// `(residual, weight)` pairs.
pub fn update_pattern(
    m_old: &[f64],
    right: &[(&[f64], f64)],
    wrong: &[(&[f64], f64)],
    lambda_m: f64,
) -> Result<PatternUpdate> {
    let dim = m_old.len();
    let weighted_sum = |entries: &[(&[f64], f64)]| -> Result<(Vec<f64>, f64)> {
        let mut u = vec![0.0; dim];
        let mut total = 0.0;
        for (r, w) in entries {
            if r.len() != dim {
                return Err(Error::dim("update_pattern", format!("{} vs {dim}", r.len())));
            }
            for (ui, ri) in u.iter_mut().zip(r.iter()) {
                *ui += w * ri;
            }
            total += w;
        }
        Ok((u, total))
    };
    let (u_right, n_right) = weighted_sum(right)?;
    let (u_wrong, n_wrong) = weighted_sum(wrong)?;
    let total = n_right + n_wrong;
    let unchanged = |u_right, u_wrong, w_right, w_wrong, direction| PatternUpdate {
        m_new: m_old.to_vec(),
        u_right,
        u_wrong,
        w_right,
        w_wrong,
        direction,
        applied: false,
    };
    if !(total > 0.0) {
        log::debug!("pattern feedback carries no weight; left unchanged");
        return Ok(unchanged(u_right, u_wrong, 0.0, 0.0, vec![0.0; dim]));
    }
    let w_right = n_right / total;
    let w_wrong = 1.0 - w_right;
    let direction: Vec<f64> = (0..dim)
        .map(|i| w_right * (u_right[i] - m_old[i]) + w_wrong * (m_old[i] - u_wrong[i]))
        .collect();
    let norm = l2_norm(&direction);
    if norm < ZERO_DIRECTION {
        return Ok(unchanged(u_right, u_wrong, w_right, w_wrong, direction));
    }
    let step = lambda_m * l2_norm(m_old) / norm;
    let m_new = m_old.iter().zip(&direction).map(|(m, u)| m + step * u).collect();
    Ok(PatternUpdate {
        m_new,
        u_right,
        u_wrong,
        w_right,
        w_wrong,
        direction,
        applied: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub record: ResidualRecord,
    /// `|y_hat - 0.5|`
    pub weight: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PatternFeedback {
    pub right: Vec<FeedbackEntry>,
    pub wrong: Vec<FeedbackEntry>,
}

/// Per-pattern feedback collected over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLedger {
    pub patterns: Vec<PatternFeedback>,
}

impl FeedbackLedger {
    pub fn new(k: usize) -> Self {
        FeedbackLedger {
            patterns: vec![PatternFeedback::default(); k],
        }
    }

    /// Files `record` under its nearest pattern. A prediction is right when
    /// `(y_hat > 0.5) == (label == 1)`. Returns the pattern index.
    pub fn record(&mut self, bank: &MemoryBank, record: ResidualRecord, y_hat: f64, label: u8) -> usize {
        let (u, _) = bank.nearest_pattern(&record.r);
        let entry = FeedbackEntry {
            record,
            weight: (y_hat - 0.5).abs(),
            y_hat,
        };
        if (y_hat > 0.5) == (label == 1) {
            self.patterns[u].right.push(entry);
        } else {
            self.patterns[u].wrong.push(entry);
        }
        u
    }

    pub fn len(&self) -> usize {
        self.patterns.iter().map(|p| p.right.len() + p.wrong.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, bool, &FeedbackEntry)> {
        self.patterns.iter().enumerate().flat_map(|(i, p)| {
            p.right
                .iter()
                .map(move |e| (i, true, e))
                .chain(p.wrong.iter().map(move |e| (i, false, e)))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochUpdate {
    pub updates: Vec<Option<PatternUpdate>>,
    pub feedback: FeedbackLedger,
}
