//! Acceptance gate. Every criterion prints one PASS or FAIL line; the
//! process exits non-zero when any fails. Tolerances and time limits are
//! fixed here and nowhere else.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use factrank::core::corpus::{tokenize, tokenize_pair_ids, Article, Claim, Vocabulary};
use factrank::core::encoder::{rot_pretrain_loss, EncoderConfig};
use factrank::core::memory::{kmeans, update_pattern, MemoryBank, MAX_ITERATIONS};
use factrank::core::metrics::{hit_at_k, map_at_k, mrr, EvalItem};
use factrank::core::retrieval::{bm25_score, index_articles, retrieve_candidates, Bm25Params};
use factrank::core::rouge::{rouge2, RougeTarget};
use factrank::core::ranker::{new_model, select_key_sentences, RankerConfig, Reranker, ScoredSentence};
use factrank::core::tensor::{Gradients, Graph, ParamId, ParameterStore, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const ROUGE_PAIRS: usize = 1000;
const ROUGE_LIMIT: Duration = Duration::from_secs(5);

const BM25_DOCS: usize = 100;
const BM25_QUERIES: usize = 200;
const BM25_REL_TOL: f64 = 1e-9;
const BM25_LIMIT: Duration = Duration::from_secs(10);

const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding compare absolutely.
const FD_FLOOR: f64 = 1e-6;
const GRAD_LIMIT: Duration = Duration::from_secs(60);

const UPDATE_CASES: usize = 1000;
const STEP_TOL: f64 = 1e-9;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const UPDATE_LIMIT: Duration = Duration::from_secs(5);

const KMEANS_DATASETS: usize = 50;
const KMEANS_LIMIT: Duration = Duration::from_secs(10);

const METRIC_CASES: usize = 500;
const METRIC_LIMIT: Duration = Duration::from_secs(5);
/// One ulp at 5/6.
const HAND_TOL: f64 = f64::EPSILON / 2.0;

const SELECT_CASES: usize = 1000;
const SELECT_WEIGHT_TOL: f64 = 1e-9;
const SELECT_LIMIT: Duration = Duration::from_secs(5);

const E2E_SEED: u64 = 7;
const E2E_CLAIMS: usize = 200;
const E2E_ARTICLES: usize = 600;
const E2E_HOLDOUT: usize = 50;
const MIN_MSE_DROP: f64 = 0.5;
const MIN_MRR_GAIN: f64 = 0.05;
const MIN_PLANTED_HIT: f64 = 0.7;
const E2E_LIMIT: Duration = Duration::from_secs(600);
const ABLATION_LIMIT: Duration = Duration::from_secs(300);

const E2E_CONFIG: &str = "\
min_freq = 1

[ranker]
k1 = 20
k2 = 3
patterns = 8
lambda_q = 0.6
lambda_p = 0.4
lambda_m = 0.3
epochs = 5
batch_size = 16
patience = 2
seed = 7

[ranker.adam]
lr = 5e-4

[ranker.encoder]
dim = 64
heads = 4
arp_layers = 2
max_len = 64
ffn_mult = 4

[ranker.pretrain]
max_pairs = 6000
overlap_fraction = 0.5
epochs = 2
batch_size = 32
lr = 1e-3
holdout_fraction = 0.1
";

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_limit(elapsed: Duration, limit: Duration) -> std::result::Result<(), String> {
    ensure(elapsed < limit, || format!("took {:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------- 1

fn brute_rouge2(q: &[u32], s: &[u32]) -> RougeTarget {
    let grams = |t: &[u32]| -> Vec<(u32, u32)> { (1..t.len()).map(|i| (t[i - 1], t[i])).collect() };
    let (gq, gs) = (grams(q), grams(s));
    let mut seen = Vec::new();
    let mut overlap = 0usize;
    for g in &gq {
        if seen.contains(g) {
            continue;
        }
        seen.push(*g);
        let in_q = gq.iter().filter(|x| *x == g).count();
        let in_s = gs.iter().filter(|x| *x == g).count();
        overlap += in_q.min(in_s);
    }
    let ratio = |n: usize| if n == 0 { 0.0 } else { overlap as f64 / n as f64 };
    RougeTarget {
        precision: ratio(gs.len()),
        recall: ratio(gq.len()),
    }
}

fn rouge_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..ROUGE_PAIRS {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
            let n = rng.gen_range(0..=30);
            (0..n).map(|_| rng.gen_range(0..20)).collect()
        };
        let q = seq(&mut rng);
        let s = seq(&mut rng);
        let got = rouge2(&q, &s);
        let want = brute_rouge2(&q, &s);
        ensure(got == want, || format!("pair {case}: {got:?} vs {want:?}"))?;
    }
    within_limit(start.elapsed(), ROUGE_LIMIT)?;
    Ok(format!("{ROUGE_PAIRS} pairs equal"))
}

// ---------------------------------------------------------------- 2

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn bm25_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let word = |rng: &mut ChaCha8Rng| format!("w{}", rng.gen_range(0..60));
    let docs: Vec<Vec<String>> = (0..BM25_DOCS)
        .map(|_| (0..rng.gen_range(1..=40)).map(|_| word(&mut rng)).collect())
        .collect();
    let articles: Vec<Article> = docs
        .iter()
        .enumerate()
        .map(|(i, d)| Article::from_sentences(format!("a{i:03}"), "s", &[d.join(" ")]).unwrap())
        .collect();
    let index = index_articles(&articles).map_err(|e| e.to_string())?;
    let params = Bm25Params::default();

    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut worst = 0.0f64;
    for qn in 0..BM25_QUERIES {
        let query: Vec<String> = (0..rng.gen_range(1..=8)).map(|_| word(&mut rng)).collect();
        let claim = Claim::new(format!("q{qn}"), query.join(" "));
        let tokens = tokenize(&claim.text);
        let terms: BTreeSet<&String> = tokens.iter().collect();
        let all = index.score_all(&tokens, &params);
        for (d, doc) in docs.iter().enumerate() {
            let mut want = 0.0;
            for t in &terms {
                let tf = doc.iter().filter(|w| w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let len = doc.len() as f64;
                want += idf * tf * (params.k + 1.0) / (tf + params.k * (1.0 - params.b + params.b * len / avg));
            }
            let id = &articles[d].id;
            let single = bm25_score(&tokens, id, &index, &params).map_err(|e| e.to_string())?;
            for got in [all[d], single] {
                ensure(rel_close(got, want, BM25_REL_TOL), || format!("query {qn} doc {id}: {got} vs {want}"))?;
                if want != 0.0 {
                    worst = worst.max((got - want).abs() / want.abs());
                }
            }
        }
        for k1 in [1, 5, 20, BM25_DOCS] {
            let mut full: Vec<(String, f64)> = all
                .iter()
                .enumerate()
                .filter(|(_, s)| **s > 0.0)
                .map(|(d, s)| (articles[d].id.clone(), *s))
                .collect();
            full.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            full.truncate(k1);
            let got: Vec<(String, f64)> = retrieve_candidates(&claim, &index, k1, &params)
                .entries
                .into_iter()
                .map(|c| (c.article_id, c.score))
                .collect();
            ensure(got == full, || format!("query {qn} k1 {k1}: candidates differ from the sorted scores"))?;
        }
    }
    within_limit(start.elapsed(), BM25_LIMIT)?;
    Ok(format!("max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

/// Worst relative error between backprop and central differences over
/// every trainable parameter of the store inside `owner`.
fn central_difference_error<M>(
    owner: &mut M,
    store: fn(&M) -> &ParameterStore,
    store_mut: fn(&mut M) -> &mut ParameterStore,
    loss: &dyn Fn(&M, &mut Graph) -> Var,
) -> f64 {
    let mut grads = Gradients::zeros_for(store(owner));
    {
        let mut g = Graph::new(store(owner));
        let l = loss(owner, &mut g);
        g.backward(l, &mut grads).unwrap();
    }
    let ids: Vec<ParamId> = store(owner).ids().filter(|&id| store(owner).is_trainable(id)).collect();
    let mut worst = 0.0f64;
    for id in ids {
        for i in 0..store(owner).value(id).len() {
            let orig = store(owner).value(id).data()[i];
            let mut eval = |v: f64| {
                store_mut(owner).value_mut(id).data_mut()[i] = v;
                let mut g = Graph::new(store(owner));
                let l = loss(owner, &mut g);
                g.value(l).item().unwrap()
            };
            let plus = eval(orig + FD_STEP);
            let minus = eval(orig - FD_STEP);
            store_mut(owner).value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads.get(id).unwrap()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn small_reranker() -> Reranker {
    let texts = [
        "salt water cures the virus",
        "officials said salt water cures the virus is false",
        "the claim that salt water cures the virus circulated online",
        "doctors found no evidence for it",
    ];
    let vocab = Vocabulary::build(texts, 1).unwrap();
    let mut cfg = RankerConfig::default();
    cfg.encoder = EncoderConfig {
        dim: 8,
        heads: 2,
        arp_layers: 1,
        max_len: 32,
        vocab_size: 0,
        ffn_mult: 2,
    };
    cfg.k2 = 2;
    cfg.patterns = 3;
    cfg.seed = 4;
    let model = new_model(&cfg, &vocab).unwrap();
    let bank = MemoryBank::random(cfg.patterns, 8, 0.5, 9).unwrap();
    Reranker::new(cfg, vocab, model, bank).unwrap()
}

fn gradient_check() -> Check {
    let start = Instant::now();

    // Pretraining path: ROUGE regression plus drift penalty.
    let mut r = small_reranker();
    let pair = {
        let q = r.vocab.encode("salt water cures the virus");
        let s = r.vocab.encode("officials said salt water cures the virus is false");
        tokenize_pair_ids(&q, &s, 32).unwrap()
    };
    let mut ids = r.model.rot_param_ids();
    ids.extend(r.model.rouge_head_ids());
    r.model.set_trainable_only(&ids);
    let rot = r.model.rot_param_ids();
    r.model.store.take_snapshot(&rot);
    // step away from the snapshot so the penalty has a gradient
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &id in &rot {
        for v in r.model.store.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.02..0.02);
        }
    }
    let target = RougeTarget {
        precision: 0.4,
        recall: 0.8,
    };
    let pretrain = |r: &Reranker, g: &mut Graph| {
        let enc = r.model.encode_rot(g, &pair).unwrap();
        let y = r.model.rouge_head(g, &enc).unwrap();
        rot_pretrain_loss(g, y, target, 0.01).unwrap()
    };
    let worst_pre = central_difference_error(&mut r, |r| &r.model.store, |r| &mut r.model.store, &pretrain);

    // Matching path: key sentences through ROT and ARP, weighted
    // aggregation with pattern vectors, prediction head and weighted BCE.
    let mut r = small_reranker();
    let claim = r.encode_claim(&Claim::new("c", "salt water cures the virus")).unwrap();
    let article = r
        .encode_article(
            &Article::from_sentences(
                "a",
                "s",
                &[
                    "officials said salt water cures the virus is false",
                    "the claim that salt water cures the virus circulated online",
                    "doctors found no evidence for it",
                ],
            )
            .unwrap(),
        )
        .unwrap();
    let key = select_key_sentences(&r.score_encoded(&claim, &article).unwrap(), r.config.k2);
    let mut ids = r.model.rot_block_ids();
    ids.extend(r.model.arp_param_ids());
    r.model.set_trainable_only(&ids);
    let matching = |r: &Reranker, g: &mut Graph| {
        let y = r.forward(g, &claim, &article, &key).unwrap().unwrap();
        let l = g.bce(y, 1.0).unwrap();
        g.scale(l, 2.5)
    };
    let worst_match = central_difference_error(&mut r, |r| &r.model.store, |r| &mut r.model.store, &matching);

    ensure(worst_pre < FD_REL_TOL, || format!("pretraining path max relative error {worst_pre:.2e}"))?;
    ensure(worst_match < FD_REL_TOL, || format!("matching path max relative error {worst_match:.2e}"))?;
    within_limit(start.elapsed(), GRAD_LIMIT)?;
    Ok(format!("max relative error {worst_pre:.1e} (pretraining), {worst_match:.1e} (matching)"))
}

// ---------------------------------------------------------------- 4

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn as_refs(v: &[(Vec<f64>, f64)]) -> Vec<(&[f64], f64)> {
    v.iter().map(|(r, w)| (r.as_slice(), *w)).collect()
}

fn update_geometry() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut applied = 0;
    let mut push_away_cases = 0;
    for case in 0..UPDATE_CASES {
        let dim = rng.gen_range(2..=16);
        let vec = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect() };
        let m_old = vec(&mut rng);
        let n_right = rng.gen_range(0..5);
        // every fourth case has no wrong feedback
        let n_wrong = if case % 4 == 0 { 0 } else { rng.gen_range(0..5) };
        let right: Vec<(Vec<f64>, f64)> = (0..n_right).map(|_| (vec(&mut rng), rng.gen_range(0.0..1.0))).collect();
        let wrong: Vec<(Vec<f64>, f64)> = (0..n_wrong).map(|_| (vec(&mut rng), rng.gen_range(0.0..1.0))).collect();
        let lambda = rng.gen_range(0.01..1.0);
        let up = update_pattern(&m_old, &as_refs(&right), &as_refs(&wrong), lambda).map_err(|e| e.to_string())?;

        if n_right + n_wrong > 0 {
            let sum = up.w_right + up.w_wrong;
            ensure((sum - 1.0).abs() <= WEIGHT_SUM_TOL, || format!("case {case}: w_r + w_w = {sum}"))?;
        }
        let moved: Vec<f64> = up.m_new.iter().zip(&m_old).map(|(a, b)| a - b).collect();
        if up.applied {
            applied += 1;
            let step = norm(&moved);
            let want = lambda * norm(&m_old);
            ensure((step - want).abs() <= STEP_TOL, || format!("case {case}: step {step} vs {want}"))?;
        } else {
            ensure(up.m_new == m_old, || format!("case {case}: skipped update moved the pattern"))?;
        }
        if n_wrong == 0 && up.applied {
            push_away_cases += 1;
            let towards: f64 = moved.iter().zip(up.u_right.iter().zip(&m_old)).map(|(d, (u, m))| d * (u - m)).sum();
            ensure(towards > 0.0, || format!("case {case}: moved away from the right feedback ({towards})"))?;
        }
    }
    ensure(applied > UPDATE_CASES / 2 && push_away_cases > 100, || {
        format!("too few informative cases: {applied} applied, {push_away_cases} without wrong feedback")
    })?;
    within_limit(start.elapsed(), UPDATE_LIMIT)?;
    Ok(format!("{UPDATE_CASES} instances, {applied} moved"))
}

// ---------------------------------------------------------------- 5

fn kmeans_sanity() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut iterations = 0;
    for set in 0..KMEANS_DATASETS {
        let n = rng.gen_range(10..=200);
        let dim = rng.gen_range(2..=8);
        let k = rng.gen_range(1..=8);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let res = kmeans(&points, k, set as u64, MAX_ITERATIONS).map_err(|e| e.to_string())?;
        iterations += res.inertia.len();
        for w in res.inertia.windows(2) {
            ensure(w[1] <= w[0], || format!("dataset {set}: inertia rose from {} to {}", w[0], w[1]))?;
        }
    }

    let mut points = Vec::new();
    for centre in [-10.0, 10.0] {
        for _ in 0..40 {
            points.push(vec![centre + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        }
    }
    let res = kmeans(&points, 2, 17, MAX_ITERATIONS).map_err(|e| e.to_string())?;
    let blob = |c: &[f64]| -> Option<i32> {
        if c[1].abs() > 1.0 {
            None
        } else if (c[0] + 10.0).abs() <= 1.0 {
            Some(-1)
        } else if (c[0] - 10.0).abs() <= 1.0 {
            Some(1)
        } else {
            None
        }
    };
    let blobs: Vec<Option<i32>> = res.centroids.iter().map(|c| blob(c)).collect();
    ensure(blobs.iter().all(Option::is_some) && blobs[0] != blobs[1], || {
        format!("centroids {:?} do not sit one per blob", res.centroids)
    })?;
    within_limit(start.elapsed(), KMEANS_LIMIT)?;
    Ok(format!("{KMEANS_DATASETS} datasets, {iterations} Lloyd iterations, blobs separated"))
}

// ---------------------------------------------------------------- 6

fn brute_metrics(items: &[EvalItem], ks: &[usize]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = items.len() as f64;
    let mut rr = 0.0;
    for it in items {
        let mut rank = 0;
        for (j, id) in it.ranking.iter().enumerate() {
            if it.relevant.contains(id) {
                rank = j + 1;
                break;
            }
        }
        rr += 1.0 / rank as f64;
    }
    let mut maps = Vec::new();
    let mut hits = Vec::new();
    for &k in ks {
        let mut ap_total = 0.0;
        let mut hit_total = 0.0;
        for it in items {
            let mut ap = 0.0;
            for j in 1..=k.min(it.ranking.len()) {
                if !it.relevant.contains(&it.ranking[j - 1]) {
                    continue;
                }
                let in_top = it.ranking[..j].iter().filter(|id| it.relevant.contains(*id)).count();
                ap += in_top as f64 / j as f64;
            }
            ap_total += ap / it.relevant.len() as f64;
            let any = it.ranking.iter().take(k).any(|id| it.relevant.contains(id));
            hit_total += if any { 1.0 } else { 0.0 };
        }
        maps.push(ap_total / n);
        hits.push(hit_total / n);
    }
    (rr / n, maps, hits)
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ks = [1, 2, 3, 5, 10];
    for case in 0..METRIC_CASES {
        let n_claims = rng.gen_range(1..=8);
        let items: Vec<EvalItem> = (0..n_claims)
            .map(|c| {
                let n = rng.gen_range(1..=15);
                let mut ranking: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
                ranking.shuffle(&mut rng);
                let mut relevant: BTreeSet<String> =
                    ranking.iter().filter(|_| rng.gen_bool(0.3)).cloned().collect();
                relevant.insert(ranking[rng.gen_range(0..n)].clone());
                // relevant articles the ranking never reached still count in n_i
                for extra in 0..rng.gen_range(0..3) {
                    relevant.insert(format!("missing{extra}"));
                }
                EvalItem {
                    claim_id: format!("c{c}"),
                    ranking,
                    relevant,
                }
            })
            .collect();
        let (want_mrr, want_map, want_hit) = brute_metrics(&items, &ks);
        let got = mrr(&items).map_err(|e| e.to_string())?;
        ensure(got == want_mrr, || format!("case {case}: MRR {got} vs {want_mrr}"))?;
        for (i, &k) in ks.iter().enumerate() {
            let m = map_at_k(&items, k).map_err(|e| e.to_string())?;
            let h = hit_at_k(&items, k).map_err(|e| e.to_string())?;
            ensure(m == want_map[i], || format!("case {case}: MAP@{k} {m} vs {}", want_map[i]))?;
            ensure(h == want_hit[i], || format!("case {case}: HIT@{k} {h} vs {}", want_hit[i]))?;
        }
    }
    let hand = EvalItem {
        claim_id: "c".into(),
        ranking: ["r1", "x", "r2", "y"].map(String::from).to_vec(),
        relevant: ["r1", "r2"].map(String::from).into_iter().collect(),
    };
    let got = map_at_k(&[hand], 3).map_err(|e| e.to_string())?;
    // (1 + 2/3) / 2 and 5.0 / 6.0 round to neighbouring doubles
    ensure((got - 5.0 / 6.0).abs() <= HAND_TOL, || format!("hand case MAP@3 = {got}, expected 5/6"))?;
    within_limit(start.elapsed(), METRIC_LIMIT)?;
    Ok(format!("{METRIC_CASES} instances equal, hand MAP@3 = 5/6"))
}

// ---------------------------------------------------------------- 7

fn selection_contract() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..SELECT_CASES {
        let n = rng.gen_range(1..=12);
        let k2 = rng.gen_range(1..=6);
        // coarse scores so ties are common
        let coarse = case % 2 == 0;
        let mut scored: Vec<ScoredSentence> = (0..n)
            .map(|i| {
                let scr = if coarse {
                    rng.gen_range(0..4) as f64 / 4.0
                } else {
                    rng.gen_range(0.0..1.0)
                };
                ScoredSentence {
                    index: i * 2 + 1,
                    scr_q: scr,
                    scr_p: scr,
                    scr,
                    pattern: 0,
                    pattern_distance: 0.0,
                    residual: vec![0.0],
                    residual_norm: 0.0,
                }
            })
            .collect();
        scored.shuffle(&mut rng);
        let mut want: Vec<&ScoredSentence> = scored.iter().collect();
        want.sort_by(|a, b| b.scr.partial_cmp(&a.scr).unwrap().then(a.index.cmp(&b.index)));
        want.truncate(k2);
        let want: Vec<usize> = want.iter().map(|s| s.index).collect();
        let got = select_key_sentences(&scored, k2);
        let got_idx: Vec<usize> = got.sentences.iter().map(|s| s.index).collect();
        ensure(got_idx == want, || format!("case {case}: selected {got_idx:?}, expected {want:?}"))?;
        let total: f64 = got.weights.iter().sum();
        ensure((total - 1.0).abs() <= SELECT_WEIGHT_TOL, || format!("case {case}: weights sum to {total}"))?;
    }
    within_limit(start.elapsed(), SELECT_LIMIT)?;
    Ok(format!("{SELECT_CASES} score lists"))
}

// ---------------------------------------------------------------- 8-10

fn factrank(out_dir: &Path, config: &Path, args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_factrank"))
        .arg("--out-dir")
        .arg(out_dir)
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .map_err(|e| format!("cannot run factrank: {e}"))?;
    ensure(out.status.success(), || {
        format!(
            "`factrank {}` failed with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

fn read_json(path: &Path) -> std::result::Result<Value, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_jsonl(path: &Path) -> std::result::Result<Vec<Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

fn number(v: &Value, key: &str) -> std::result::Result<f64, String> {
    v.get(key).and_then(Value::as_f64).ok_or_else(|| format!("missing number {key:?}"))
}

struct Pipeline {
    data: PathBuf,
    out: PathBuf,
    config: PathBuf,
}

impl Pipeline {
    fn p(&self, dir: &Path, name: &str) -> String {
        dir.join(name).display().to_string()
    }

    /// Generation through evaluation of the reranked test split.
    fn run(root: &Path) -> std::result::Result<Pipeline, String> {
        let data = root.join("data");
        let out = root.join("out");
        let config = root.join("config.toml");
        std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
        std::fs::write(&config, E2E_CONFIG).map_err(|e| e.to_string())?;
        let run = Pipeline { data, out, config };
        let (d, o) = (&run.data, &run.out);
        let seed = E2E_SEED.to_string();
        let claims = E2E_CLAIMS.to_string();
        let articles = E2E_ARTICLES.to_string();
        let holdout = E2E_HOLDOUT.to_string();
        factrank(d, &run.config, &[
            "gen-synthetic", "--seed", &seed, "--claims", &claims, "--articles", &articles, "--holdout", &holdout,
        ])?;
        let (arts, tr_c, tr_l) = (run.p(d, "articles.jsonl"), run.p(d, "train-claims.jsonl"), run.p(d, "train-labels.jsonl"));
        let (te_c, te_l) = (run.p(d, "test-claims.jsonl"), run.p(d, "test-labels.jsonl"));
        let index = run.p(o, "index.bin");
        factrank(o, &run.config, &["index", "--articles", &arts])?;
        factrank(o, &run.config, &["retrieve", "--index", &index, "--claims", &te_c])?;
        factrank(o, &run.config, &[
            "eval", "--results", &run.p(o, "candidates.jsonl"), "--labels", &te_l, "--out", "bm25-eval.json",
        ])?;
        let data_args = ["--claims", tr_c.as_str(), "--articles", arts.as_str(), "--labels", tr_l.as_str()];
        let mut args = vec!["pretrain-rot"];
        args.extend(data_args);
        factrank(o, &run.config, &args)?;
        let rot = run.p(o, "rot.ckpt");
        let mut args = vec!["train", "--rot", rot.as_str()];
        args.extend(data_args);
        factrank(o, &run.config, &args)?;
        factrank(o, &run.config, &[
            "rerank", "--model", &run.p(o, "model.ckpt"), "--claims", &te_c, "--articles", &arts, "--index", &index,
        ])?;
        factrank(o, &run.config, &["eval", "--results", &run.p(o, "results.jsonl"), "--labels", &te_l])?;
        Ok(run)
    }
}

/// Share of planted relevant pairs whose quotation or pattern sentence is
/// among the selected key sentences.
fn planted_hit_rate(run: &Pipeline) -> std::result::Result<(usize, usize), String> {
    let test: BTreeSet<String> = read_jsonl(&run.data.join("test-claims.jsonl"))?
        .iter()
        .filter_map(|c| c["id"].as_str().map(String::from))
        .collect();
    let mut planted = BTreeMap::new();
    for p in read_jsonl(&run.data.join("planted.jsonl"))? {
        let claim = p["claim_id"].as_str().unwrap_or_default().to_string();
        if test.contains(&claim) {
            let article = p["article_id"].as_str().unwrap_or_default().to_string();
            planted.insert((claim, article), (p["quote_index"].as_u64(), p["pattern_index"].as_u64()));
        }
    }
    let mut hits = 0;
    for line in read_jsonl(&run.out.join("results.jsonl"))? {
        let claim = line["claim_id"].as_str().unwrap_or_default();
        for entry in line["ranking"].as_array().into_iter().flatten() {
            let article = entry["article_id"].as_str().unwrap_or_default();
            let Some((quote, pattern)) = planted.get(&(claim.to_string(), article.to_string())) else {
                continue;
            };
            let key: Vec<Option<u64>> = entry["key_sentences"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|s| s["index"].as_u64())
                .collect();
            if key.contains(quote) || key.contains(pattern) {
                hits += 1;
            }
        }
    }
    Ok((hits, planted.len()))
}

fn end_to_end(root: &Path) -> std::result::Result<(String, Option<Pipeline>), (String, Option<Pipeline>)> {
    let start = Instant::now();
    let run = Pipeline::run(root).map_err(|e| (e, None))?;
    let elapsed = start.elapsed();
    let check = || -> Check {
        let report = read_json(&run.out.join("pretrain-report.json"))?;
        let (before, after) = (number(&report, "mse_before")?, number(&report, "mse_after")?);
        let drop = 1.0 - after / before;
        let bm25 = number(&read_json(&run.out.join("bm25-eval.json"))?, "MRR")?;
        let reranked = number(&read_json(&run.out.join("eval.json"))?, "MRR")?;
        let (hits, total) = planted_hit_rate(&run)?;
        let rate = hits as f64 / total.max(1) as f64;
        let detail = format!(
            "MSE {before:.4} -> {after:.4} (drop {:.1}%), MRR {bm25:.4} -> {reranked:.4}, planted {hits}/{total}, {:.0} s",
            100.0 * drop,
            elapsed.as_secs_f64()
        );
        ensure(drop >= MIN_MSE_DROP, || format!("(a) pretraining MSE drop below {MIN_MSE_DROP}: {detail}"))?;
        ensure(reranked - bm25 >= MIN_MRR_GAIN, || format!("(b) MRR gain below {MIN_MRR_GAIN}: {detail}"))?;
        ensure(total == E2E_HOLDOUT && rate >= MIN_PLANTED_HIT, || format!("(c) planted sentences below {MIN_PLANTED_HIT}: {detail}"))?;
        within_limit(elapsed, E2E_LIMIT)?;
        Ok(detail)
    };
    match check() {
        Ok(d) => Ok((d, Some(run))),
        Err(e) => Err((e, Some(run))),
    }
}

fn determinism(first: &Pipeline, root: &Path) -> Check {
    let second = Pipeline::run(root)?;
    let mut same = Vec::new();
    for (dir_a, dir_b, name) in [
        (&first.data, &second.data, "articles.jsonl"),
        (&first.out, &second.out, "candidates.jsonl"),
        (&first.out, &second.out, "rot.ckpt"),
        (&first.out, &second.out, "model.ckpt"),
        (&first.out, &second.out, "results.jsonl"),
    ] {
        let a = std::fs::read(dir_a.join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dir_b.join(name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between runs"))?;
        same.push(name);
    }
    Ok(format!("byte-identical {}", same.join(", ")))
}

fn ablation_smoke(run: &Pipeline, root: &Path) -> Check {
    let start = Instant::now();
    let (d, o) = (&run.data, &run.out);
    let out = root.join("ablate");
    let mut reports = Vec::new();
    for variant in factrank::core::ranker::Ablation::VARIANTS {
        let args = [
            "ablate", "--variant", variant,
            "--claims", &run.p(d, "train-claims.jsonl"),
            "--articles", &run.p(d, "articles.jsonl"),
            "--labels", &run.p(d, "train-labels.jsonl"),
            "--eval-claims", &run.p(d, "test-claims.jsonl"),
            "--eval-labels", &run.p(d, "test-labels.jsonl"),
            "--rot", &run.p(o, "rot.ckpt"),
            "--epochs", "1",
        ];
        factrank(&out, &run.config, &args)?;
        let eval = read_json(&out.join(variant).join("eval.json"))?;
        for key in ["MRR", "MAP@1", "MAP@3", "MAP@5", "HIT@1", "HIT@3", "HIT@5"] {
            let v = number(&eval, key).map_err(|e| format!("{variant}: {e}"))?;
            ensure((0.0..=1.0).contains(&v), || format!("{variant}: {key} = {v}"))?;
        }
        let claims = eval["claims"].as_u64().unwrap_or(0);
        ensure(claims > 0, || format!("{variant}: no claims evaluated"))?;
        reports.push(format!("{variant} {:.3}", number(&eval, "MRR")?));
    }
    within_limit(start.elapsed(), ABLATION_LIMIT)?;
    Ok(format!("MRR {} in {:.0} s", reports.join(", "), start.elapsed().as_secs_f64()))
}

// ----------------------------------------------------------------

fn report(results: &mut Vec<bool>, n: usize, name: &str, start: Instant, outcome: Check) {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS {n:>2} {name} ({secs:.1} s): {detail}");
            results.push(true);
        }
        Err(why) => {
            println!("FAIL {n:>2} {name} ({secs:.1} s): {why}");
            results.push(false);
        }
    }
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results = Vec::new();
    let unit: [(&str, fn() -> Check); 7] = [
        ("ROUGE-2 oracle", rouge_oracle),
        ("BM25 oracle", bm25_oracle),
        ("gradient check", gradient_check),
        ("memory update geometry", update_geometry),
        ("k-means sanity", kmeans_sanity),
        ("metric oracles", metric_oracles),
        ("key-sentence selection", selection_contract),
    ];
    for (i, (name, f)) in unit.into_iter().enumerate() {
        let start = Instant::now();
        report(&mut results, i + 1, name, start, guarded(f));
    }

    let tmp = tempfile::tempdir().expect("temporary directory");
    let start = Instant::now();
    let mut first = None;
    let outcome = guarded(|| match end_to_end(&tmp.path().join("run1")) {
        Ok((d, run)) => {
            first = run;
            Ok(d)
        }
        Err((e, run)) => {
            first = run;
            Err(e)
        }
    });
    report(&mut results, 8, "end-to-end synthetic run", start, outcome);

    let start = Instant::now();
    let outcome = match &first {
        Some(run) => guarded(|| determinism(run, &tmp.path().join("run2"))),
        None => Err("no completed first run to compare".into()),
    };
    report(&mut results, 9, "determinism", start, outcome);

    let start = Instant::now();
    let outcome = match &first {
        Some(run) => guarded(|| ablation_smoke(run, tmp.path())),
        None => Err("no completed first run to reuse".into()),
    };
    report(&mut results, 10, "ablation smoke", start, outcome);

    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
