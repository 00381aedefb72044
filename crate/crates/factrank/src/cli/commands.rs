use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use factrank_core::corpus::{generate_synthetic_corpus, Article, Claim, RelevanceLabel, Vocabulary};
use factrank_core::ranker::{Ablation, TrainingLog};
use factrank_core::retrieval::{index_articles, InvertedIndex};

use super::{resolve, Cli, Command, DataArgs, Overrides};
use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::io::{
    articles_to_jsonl, load_articles, load_claims, load_labels, load_vocab, read_jsonl, to_jsonl, write_atomic,
    write_vocab,
};
use crate::manifest::RunManifest;
use crate::pipeline::{
    evaluate, memory_neighbours, neighbours_to_text, pretrain, rerank_all, retrieve_all, train_model, ResultLine,
};
use crate::{index_file, io};

pub(super) fn dispatch(cli: Cli) -> Result<()> {
    let mut config = Config::load_or_default(cli.config.as_deref())?;
    let mut m = RunManifest::new(cli.command.name());
    if let Some(p) = &cli.config {
        m.dataset(p)?;
    }
    let out_dir = cli.out_dir;
    let start = Instant::now();
    match cli.command {
        Command::GenSynthetic {
            seed,
            n_claims,
            n_articles,
            holdout,
        } => gen_synthetic(&out_dir, &mut m, &config, seed, n_claims, n_articles, holdout)?,
        Command::BuildVocab {
            claims,
            articles,
            min_freq,
            out,
        } => {
            let min_freq = min_freq.unwrap_or(config.min_freq);
            let (c, a) = (load_claims(&claims)?, load_articles(&articles)?);
            m.dataset(&claims)?;
            m.dataset(&articles)?;
            let vocab = build_vocab(&c, &a, min_freq)?;
            let out = resolve(&out_dir, &out);
            write_vocab(&out, &vocab)?;
            m.output(&out, io::vocab_to_text(&vocab).as_bytes());
            m.with_config(&serde_json::json!({ "min_freq": min_freq }));
        }
        Command::Index { articles, out } => {
            let a = load_articles(&articles)?;
            m.dataset(&articles)?;
            let index = index_articles(&a)?;
            let out = resolve(&out_dir, &out);
            let bytes = index_file::save(&out, &index)?;
            m.output(&out, &bytes);
        }
        Command::Retrieve { index, claims, k1, out } => {
            let idx = index_file::load(&index)?;
            let c = load_claims(&claims)?;
            m.dataset(&index)?;
            m.dataset(&claims)?;
            let k1 = k1.unwrap_or(config.ranker.k1);
            if k1 == 0 {
                return Err(Error::Usage("--k1 must be at least 1".into()));
            }
            let lines = retrieve_all(&c, &idx, k1, &config.ranker.bm25);
            let out = resolve(&out_dir, &out);
            let bytes = to_jsonl(&lines);
            write_atomic(&out, &bytes)?;
            m.output(&out, &bytes);
            m.with_config(&serde_json::json!({ "k1": k1, "bm25": config.ranker.bm25 }));
        }
        Command::PretrainRot {
            data,
            vocab,
            overrides,
            out,
        } => {
            apply(&overrides, &mut config);
            let (claims, articles, labels) = load_data(&data, &mut m)?;
            let vocab = vocab_for(vocab.as_deref(), &claims, &articles, config.min_freq, &mut m)?;
            m.seed = Some(config.ranker.seed);
            m.with_config(&config);
            let t = Instant::now();
            let (model, report) = pretrain(&claims, &articles, &labels, &vocab, &config.ranker)?;
            m.time("pretrain", t);
            log::info!("pretraining MSE {:.5} -> {:.5}", report.mse_before, report.mse_after);
            let out = resolve(&out_dir, &out);
            let bytes = Checkpoint::from_model(&config.ranker, &vocab, &model).save(&out)?;
            m.checkpoint(&out, &bytes);
            let report_path = out_dir.join("pretrain-report.json");
            let text = pretty(&report);
            write_atomic(&report_path, text.as_bytes())?;
            m.output(&report_path, text.as_bytes());
        }
        Command::Train {
            data,
            vocab,
            rot,
            overrides,
            out,
            log,
        } => {
            apply(&overrides, &mut config);
            train_cmd(&out_dir, &mut m, &config, &data, vocab.as_deref(), rot.as_deref(), &out, &log)?;
        }
        Command::Rerank {
            model,
            claims,
            articles,
            index,
            out,
        } => {
            let reranker = Checkpoint::load(&model)?.reranker()?;
            let c = load_claims(&claims)?;
            let a = load_articles(&articles)?;
            m.dataset(&model)?;
            m.dataset(&claims)?;
            m.dataset(&articles)?;
            let idx = load_or_build_index(index.as_deref(), &a, &mut m)?;
            m.seed = Some(reranker.config.seed);
            m.with_config(&reranker.config);
            let t = Instant::now();
            let lines = rerank_all(&reranker, &c, &a, &idx)?;
            m.time("rerank", t);
            let out = resolve(&out_dir, &out);
            let bytes = to_jsonl(&lines);
            write_atomic(&out, &bytes)?;
            m.output(&out, &bytes);
        }
        Command::Eval { results, labels, k, out } => {
            if k.is_empty() || k.contains(&0) {
                return Err(Error::Usage("--k needs cutoffs of at least 1".into()));
            }
            let lines: Vec<ResultLine> = read_jsonl(&results)?;
            let l = load_labels(&labels)?;
            m.dataset(&results)?;
            m.dataset(&labels)?;
            let report = evaluate(&lines, &l, &k)?;
            print!("{}", report.to_text());
            let out = resolve(&out_dir, &out);
            let text = pretty(&report);
            write_atomic(&out, text.as_bytes())?;
            m.output(&out, text.as_bytes());
        }
        Command::InspectMemory {
            model,
            log,
            articles,
            top,
            out,
        } => {
            let reranker = Checkpoint::load(&model)?.reranker()?;
            let training: TrainingLog = serde_json::from_slice(&io::read_file(&log)?)
                .map_err(|e| Error::format(&log, format!("training log: {e}")))?;
            let a = load_articles(&articles)?;
            m.dataset(&model)?;
            m.dataset(&log)?;
            m.dataset(&articles)?;
            let ledger = training
                .feedback
                .ok_or_else(|| Error::Usage("the training log holds no feedback".into()))?;
            if ledger.patterns.len() != reranker.bank.k() {
                return Err(Error::Usage("training log and model disagree on the number of patterns".into()));
            }
            let neighbours = memory_neighbours(&reranker.bank, &ledger, &a, top)?;
            let text = neighbours_to_text(&reranker.bank, &neighbours);
            print!("{text}");
            let out = resolve(&out_dir, &out);
            write_atomic(&out, text.as_bytes())?;
            m.output(&out, text.as_bytes());
        }
        Command::Ablate {
            variant,
            data,
            eval_claims,
            eval_labels,
            vocab,
            rot,
            overrides,
        } => {
            apply(&overrides, &mut config);
            let a = Ablation::variant(&variant)?;
            merge_ablation(&mut config.ranker.ablation, a);
            let dir = out_dir.join(&variant);
            let ck = train_cmd(
                &dir,
                &mut m,
                &config,
                &data,
                vocab.as_deref(),
                rot.as_deref(),
                Path::new("model.ckpt"),
                Path::new("training-log.json"),
            )?;
            let reranker = ck.reranker()?;
            let c = load_claims(&eval_claims)?;
            let l = load_labels(&eval_labels)?;
            m.dataset(&eval_claims)?;
            m.dataset(&eval_labels)?;
            let articles = load_articles(&data.articles)?;
            let idx = index_articles(&articles)?;
            let t = Instant::now();
            let lines = rerank_all(&reranker, &c, &articles, &idx)?;
            m.time("rerank", t);
            let results = dir.join("results.jsonl");
            let bytes = to_jsonl(&lines);
            write_atomic(&results, &bytes)?;
            m.output(&results, &bytes);
            let report = evaluate(&lines, &l, &[1, 3, 5])?;
            print!("{variant}\n{}", report.to_text());
            let eval = dir.join("eval.json");
            let text = pretty(&report);
            write_atomic(&eval, text.as_bytes())?;
            m.output(&eval, text.as_bytes());
            m.time("total", start);
            m.write(&dir)?;
            return Ok(());
        }
    }
    m.time("total", start);
    m.write(&out_dir)?;
    Ok(())
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn apply(o: &Overrides, c: &mut Config) {
    let r = &mut c.ranker;
    macro_rules! set {
        ($flag:ident => $($field:tt)+) => {
            if let Some(v) = o.$flag {
                $($field)+ = v;
            }
        };
    }
    set!(seed => r.seed);
    set!(epochs => r.epochs);
    set!(batch_size => r.batch_size);
    set!(lr => r.adam.lr);
    set!(k1 => r.k1);
    set!(k2 => r.k2);
    set!(patterns => r.patterns);
    set!(lambda_m => r.lambda_m);
    set!(dim => r.encoder.dim);
    set!(heads => r.encoder.heads);
    set!(arp_layers => r.encoder.arp_layers);
    set!(max_len => r.encoder.max_len);
    set!(patience => r.patience);
    set!(pretrain_pairs => r.pretrain.max_pairs);
    set!(pretrain_epochs => r.pretrain.epochs);
    set!(pretrain_batch_size => r.pretrain.batch_size);
    set!(min_freq => c.min_freq);
}

fn merge_ablation(into: &mut Ablation, a: Ablation) {
    into.no_rouge |= a.no_rouge;
    into.rand_mem_init |= a.rand_mem_init;
    into.no_mem_update |= a.no_mem_update;
    into.no_pmb |= a.no_pmb;
    into.avg_pool |= a.avg_pool;
    into.no_pattern_aggr |= a.no_pattern_aggr;
}

fn load_data(d: &DataArgs, m: &mut RunManifest) -> Result<(Vec<Claim>, Vec<Article>, Vec<RelevanceLabel>)> {
    let out = (load_claims(&d.claims)?, load_articles(&d.articles)?, load_labels(&d.labels)?);
    m.dataset(&d.claims)?;
    m.dataset(&d.articles)?;
    m.dataset(&d.labels)?;
    Ok(out)
}

pub(crate) fn build_vocab(claims: &[Claim], articles: &[Article], min_freq: u64) -> Result<Vocabulary> {
    let texts = claims.iter().map(|c| c.text.clone()).chain(articles.iter().map(Article::text));
    Ok(Vocabulary::build(texts, min_freq)?)
}

fn vocab_for(
    path: Option<&Path>,
    claims: &[Claim],
    articles: &[Article],
    min_freq: u64,
    m: &mut RunManifest,
) -> Result<Vocabulary> {
    match path {
        Some(p) => {
            let v = load_vocab(p)?;
            m.dataset(p)?;
            Ok(v)
        }
        None => build_vocab(claims, articles, min_freq),
    }
}

fn load_or_build_index(path: Option<&Path>, articles: &[Article], m: &mut RunManifest) -> Result<InvertedIndex> {
    match path {
        Some(p) => {
            let idx = index_file::load(p)?;
            m.dataset(p)?;
            if idx.n_docs() != articles.len() || articles.iter().any(|a| idx.doc_len(&a.id).is_none()) {
                return Err(Error::Usage("the index was built from a different article collection".into()));
            }
            Ok(idx)
        }
        None => Ok(index_articles(articles)?),
    }
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    out_dir: &Path,
    m: &mut RunManifest,
    config: &Config,
    data: &DataArgs,
    vocab: Option<&Path>,
    rot: Option<&Path>,
    out: &Path,
    log_path: &Path,
) -> Result<Checkpoint> {
    let (claims, articles, labels) = load_data(data, m)?;
    let rot = match rot {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            m.dataset(p)?;
            Some(ck)
        }
        None => None,
    };
    let vocab = match (&rot, vocab) {
        (Some(ck), None) => ck.vocab.clone(),
        _ => vocab_for(vocab, &claims, &articles, config.min_freq, m)?,
    };
    m.seed = Some(config.ranker.seed);
    m.with_config(config);
    let t = Instant::now();
    let (reranker, log) = train_model(&claims, &articles, &labels, vocab, &config.ranker, rot.as_ref())?;
    m.time("train", t);
    for e in &log.epochs {
        log::info!("epoch {}: loss {:.4}, validation MRR {:?}", e.epoch, e.mean_loss, e.val_mrr);
    }
    let ck = Checkpoint::from_reranker(&reranker);
    let out = resolve(out_dir, out);
    let bytes = ck.save(&out)?;
    m.checkpoint(&out, &bytes);
    let log_path = resolve(out_dir, log_path);
    let text = pretty(&log);
    write_atomic(&log_path, text.as_bytes())?;
    m.output(&log_path, text.as_bytes());
    Ok(ck)
}

fn gen_synthetic(
    out_dir: &Path,
    m: &mut RunManifest,
    config: &Config,
    seed: u64,
    n_claims: usize,
    n_articles: usize,
    holdout: Option<usize>,
) -> Result<()> {
    let corpus = generate_synthetic_corpus(seed, n_claims, n_articles, &config.generator)?;
    m.seed = Some(seed);
    m.with_config(&serde_json::json!({
        "claims": n_claims,
        "articles": n_articles,
        "holdout": holdout,
        "generator": config.generator,
    }));
    let mut outputs: Vec<(PathBuf, Vec<u8>)> = vec![
        (out_dir.join("claims.jsonl"), to_jsonl(&corpus.claims)),
        (out_dir.join("articles.jsonl"), articles_to_jsonl(&corpus.articles)),
        (out_dir.join("labels.jsonl"), to_jsonl(&corpus.labels)),
        (out_dir.join("planted.jsonl"), to_jsonl(&corpus.planted)),
    ];
    if let Some(n) = holdout {
        if n > corpus.claims.len() {
            return Err(Error::Usage(format!("--holdout {n} exceeds the {} claims", corpus.claims.len())));
        }
        let test: BTreeSet<&str> = corpus.claims.iter().take(n).map(|c| c.id.as_str()).collect();
        let (te_c, tr_c): (Vec<&Claim>, Vec<&Claim>) = corpus.claims.iter().partition(|c| test.contains(c.id.as_str()));
        let (te_l, tr_l): (Vec<&RelevanceLabel>, Vec<&RelevanceLabel>) =
            corpus.labels.iter().partition(|l| test.contains(l.claim_id.as_str()));
        outputs.push((out_dir.join("train-claims.jsonl"), to_jsonl(&tr_c)));
        outputs.push((out_dir.join("train-labels.jsonl"), to_jsonl(&tr_l)));
        outputs.push((out_dir.join("test-claims.jsonl"), to_jsonl(&te_c)));
        outputs.push((out_dir.join("test-labels.jsonl"), to_jsonl(&te_l)));
    }
    for (path, bytes) in &outputs {
        write_atomic(path, bytes)?;
        m.output(path, bytes);
    }
    Ok(())
}
