//! Seeded synthetic corpus with planted quotation and pattern sentences.
//!
//! Every claim gets exactly one relevant article. That article quotes a
//! contiguous span of the claim inside filler text and carries one sentence
//! built from a fixed pool of debunking/spreading phrases about the claim's
//! topic, surrounded by topical distractors. The remaining articles are short
//! decoys that repeat a target claim's name, place and topic words without
//! reproducing any claim bigram and without pattern phrases, so BM25 tends to
//! over-rank them.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, Article, Claim, RelevanceLabel, Sentence};
use crate::{Error, Result};

const TOPICS: [[&str; 8]; 8] = [
    ["vaccine", "virus", "hospital", "doctors", "medicine", "masks", "salt", "fever"],
    ["milk", "rice", "eggs", "bread", "sugar", "noodles", "fruit", "tea"],
    ["earthquake", "flood", "typhoon", "wildfire", "storm", "landslide", "drought", "tsunami"],
    ["bank", "banknotes", "taxes", "pension", "salary", "loans", "coins", "prices"],
    ["phones", "network", "wifi", "satellites", "chips", "apps", "signals", "robots"],
    ["trains", "airport", "bridge", "subway", "highway", "buses", "tickets", "tunnel"],
    ["exams", "students", "teachers", "campus", "diplomas", "textbooks", "lessons", "tuition"],
    ["tigers", "dogs", "snakes", "birds", "cattle", "bees", "sharks", "monkeys"],
];

const ROLES: [&str; 8] = [
    "mayor", "minister", "professor", "official", "celebrity", "sheriff", "governor", "spokesman",
];
const VERBS: [&str; 8] = [
    "cure", "destroy", "poison", "replace", "ban", "double", "protect", "contaminate",
];
const VERBS_PAST: [&str; 8] = [
    "banned", "announced", "confirmed", "hid", "leaked", "approved", "ordered", "revealed",
];
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "ven", "dor", "sel", "tri", "zan", "qui", "bel", "mor", "tas", "nix",
    "pol", "gru",
];
const PLACE_SUFFIXES: [&str; 4] = ["ville", "ford", "burg", "stad"];
const SOURCES: [&str; 4] = ["checkdesk", "rumorwatch", "factline", "truthlab"];

const CLAIM_TEMPLATES: [&str; 4] = [
    "{role} {name} said {t1} {t2} can {verb} {t3} in {place}",
    "a video shows {t1} {t2} {past} by {role} {name} near {place}",
    "{name} {past} that {t1} {t3} will {verb} every {t2} in {place}",
    "breaking {place} {role} {name} {past} {t1} and {t2} {t3}",
];

const QUOTE_PREFIXES: [&str; 4] = [
    "recently a post claimed",
    "a message circulating online said",
    "netizens shared that",
    "one viral article wrote",
];
const QUOTE_SUFFIXES: [&str; 4] = [
    "",
    "and many believed it",
    "with a photo attached",
    "citing unnamed sources",
];

/// Sentence-level templates carrying an event-irrelevant debunking pattern.
pub const PATTERN_TEMPLATES: [&str; 8] = [
    "the claim about {t} has been debunked by scientists",
    "posts about {t} spread in social feeds last month",
    "this rumor about {t} is false according to experts",
    "messages about {t} have circulated for years online",
    "our fact check found the story on {t} misleading",
    "the viral post about {t} was fabricated",
    "authorities clarified that the {t} rumor is untrue",
    "screenshots about {t} were shared in chat groups",
];

const TOPIC_FILLERS: [&str; 12] = [
    "experts say the supply of {t} remained stable this year",
    "readers often ask how {t} is regulated",
    "local reports about {t} and {u} vary widely",
    "the agency publishes data on {t} every month",
    "some residents worry about {t} during the holidays",
    "historical records mention {t} many times",
    "officials have not commented on {t} costs",
    "the museum exhibit covered {t} and {u}",
    "a survey asked people about {t}",
    "newspapers covered {t} extensively last spring",
    "interest in {u} grew after the report on {t}",
    "the committee reviewed {t} policies again",
];
const GENERIC_FILLERS: [&str; 8] = [
    "the weather was mild on monday",
    "the committee meets twice a year",
    "traffic was light during the morning",
    "the report was updated in the evening",
    "several readers sent questions by email",
    "the office will close early on friday",
    "volunteers helped organize the event",
    "the annual summary will follow soon",
];
const DECOY_TEMPLATES: [&str; 8] = [
    "{name} attended a charity dinner in {place} on friday",
    "residents of {place} discussed {t} at a town meeting",
    "{name} gave an interview about the local economy",
    "the {t} market near {place} opened early this year",
    "a new library opened in {place} with support from {name}",
    "{name} posted photos of {t} from a recent trip",
    "the weather in {place} stayed warm through the weekend",
    "{name} is known in {place} for volunteering with {u}",
];

/// Knobs of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Minimum fraction of claim tokens quoted verbatim in the quotation sentence.
    pub quote_fraction: f64,
    pub min_decoy_sentences: usize,
    pub max_decoy_sentences: usize,
    pub min_decoy_fillers: usize,
    pub max_decoy_fillers: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            min_distractors: 8,
            max_distractors: 30,
            quote_fraction: 0.6,
            min_decoy_sentences: 2,
            max_decoy_sentences: 5,
            min_decoy_fillers: 2,
            max_decoy_fillers: 6,
        }
    }
}

/// Sentence positions of the planted quotation and pattern sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedSentences {
    pub claim_id: String,
    pub article_id: String,
    pub quote_index: usize,
    pub pattern_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub claims: Vec<Claim>,
    pub articles: Vec<Article>,
    pub labels: Vec<RelevanceLabel>,
    pub planted: Vec<PlantedSentences>,
}

struct ClaimSeed {
    text: String,
    tokens: Vec<String>,
    topic: usize,
    topic_words: [&'static str; 3],
    name: String,
    place: String,
}

fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::from(template);
    for (key, value) in slots {
        out = out.replace(key, value);
    }
    out
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn bigrams(tokens: &[String]) -> BTreeSet<(String, String)> {
    tokens
        .windows(2)
        .map(|w| (w[0].clone(), w[1].clone()))
        .collect()
}

fn unique_word(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>, suffix: Option<&str>) -> String {
    loop {
        let mut w = String::new();
        let n = if suffix.is_some() { 2 } else { 3 };
        for _ in 0..n {
            w.push_str(pick(rng, &SYLLABLES));
        }
        if let Some(s) = suffix {
            w.push_str(s);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn make_claim(rng: &mut ChaCha8Rng, used: &mut BTreeSet<String>) -> ClaimSeed {
    let topic = rng.gen_range(0..TOPICS.len());
    let mut words: Vec<&'static str> = TOPICS[topic].to_vec();
    words.shuffle(rng);
    let topic_words = [words[0], words[1], words[2]];
    let name = unique_word(rng, used, None);
    let suffix = *pick(rng, &PLACE_SUFFIXES);
    let place = unique_word(rng, used, Some(suffix));
    let text = fill(
        pick(rng, &CLAIM_TEMPLATES),
        &[
            ("{role}", pick(rng, &ROLES)),
            ("{name}", &name),
            ("{verb}", pick(rng, &VERBS)),
            ("{past}", pick(rng, &VERBS_PAST)),
            ("{place}", &place),
            ("{t1}", topic_words[0]),
            ("{t2}", topic_words[1]),
            ("{t3}", topic_words[2]),
        ],
    );
    let tokens = tokenize(&text);
    ClaimSeed {
        text,
        tokens,
        topic,
        topic_words,
        name,
        place,
    }
}

fn topic_filler(rng: &mut ChaCha8Rng, topic: usize) -> String {
    if rng.gen_bool(0.25) {
        return String::from(*pick(rng, &GENERIC_FILLERS));
    }
    let t = *pick(rng, &TOPICS[topic]);
    let u = *pick(rng, &TOPICS[topic]);
    fill(pick(rng, &TOPIC_FILLERS), &[("{t}", t), ("{u}", u)])
}

fn quote_sentence(rng: &mut ChaCha8Rng, claim: &ClaimSeed, fraction: f64) -> String {
    let n = claim.tokens.len();
    let min_len = libm::ceil(fraction * n as f64) as usize;
    let len = rng.gen_range(min_len.clamp(1, n)..=n);
    let start = rng.gen_range(0..=n - len);
    let span = claim.tokens[start..start + len].join(" ");
    let prefix = pick(rng, &QUOTE_PREFIXES);
    let suffix = pick(rng, &QUOTE_SUFFIXES);
    if suffix.is_empty() {
        format!("{prefix} {span}.")
    } else {
        format!("{prefix} {span} {suffix}.")
    }
}

fn decoy_sentence(rng: &mut ChaCha8Rng, claim: &ClaimSeed) -> String {
    let claim_bigrams = bigrams(&claim.tokens);
    loop {
        let t = *pick(rng, &claim.topic_words);
        let u = *pick(rng, &TOPICS[claim.topic]);
        let s = fill(
            pick(rng, &DECOY_TEMPLATES),
            &[("{name}", &claim.name), ("{place}", &claim.place), ("{t}", t), ("{u}", u)],
        );
        if bigrams(&tokenize(&s)).is_disjoint(&claim_bigrams) {
            return s;
        }
    }
}

fn sentence_list(texts: Vec<String>) -> Vec<Sentence> {
    texts
        .into_iter()
        .enumerate()
        .map(|(index, mut text)| {
            if !text.ends_with('.') {
                text.push('.');
            }
            Sentence { index, text }
        })
        .collect()
}

/// Generates claims, articles, relevance labels and planted-sentence metadata.
///
/// The output is a pure function of `seed`, the counts and `config`.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_claims: usize,
    n_articles: usize,
    config: &GeneratorConfig,
) -> Result<SyntheticCorpus> {
    if n_articles < n_claims {
        return Err(Error::config("n_articles must be at least n_claims"));
    }
    if config.min_distractors > config.max_distractors
        || config.min_decoy_sentences > config.max_decoy_sentences
        || config.min_decoy_fillers > config.max_decoy_fillers
        || config.max_decoy_sentences == 0
        || !(0.0..=1.0).contains(&config.quote_fraction)
    {
        return Err(Error::config("inconsistent generator ranges"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    for topic in TOPICS.iter() {
        used.extend(topic.iter().map(|w| String::from(*w)));
    }

    let seeds: Vec<ClaimSeed> = (0..n_claims).map(|_| make_claim(&mut rng, &mut used)).collect();

    struct Draft {
        claim: usize,
        relevant: bool,
        sentences: Vec<String>,
        quote: usize,
        pattern: usize,
    }
    let mut drafts = Vec::with_capacity(n_articles);
    for (ci, claim) in seeds.iter().enumerate() {
        let n_distract = rng.gen_range(config.min_distractors..=config.max_distractors);
        let mut sentences: Vec<String> =
            (0..n_distract).map(|_| topic_filler(&mut rng, claim.topic)).collect();
        let quote = quote_sentence(&mut rng, claim, config.quote_fraction);
        let pattern = fill(pick(&mut rng, &PATTERN_TEMPLATES), &[("{t}", claim.topic_words[0])]);
        let qi = rng.gen_range(0..=sentences.len());
        sentences.insert(qi, quote);
        let pi = rng.gen_range(0..=sentences.len());
        sentences.insert(pi, pattern);
        let qi = if pi <= qi { qi + 1 } else { qi };
        drafts.push(Draft {
            claim: ci,
            relevant: true,
            sentences,
            quote: qi,
            pattern: pi,
        });
    }
    let mut targets: Vec<usize> = (0..n_articles - n_claims).map(|i| i % n_claims.max(1)).collect();
    targets.shuffle(&mut rng);
    for ci in targets {
        let claim = &seeds[ci];
        let n_decoy = rng.gen_range(config.min_decoy_sentences..=config.max_decoy_sentences);
        let n_fill = rng.gen_range(config.min_decoy_fillers..=config.max_decoy_fillers);
        let mut sentences: Vec<String> = (0..n_decoy).map(|_| decoy_sentence(&mut rng, claim)).collect();
        sentences.extend((0..n_fill).map(|_| topic_filler(&mut rng, claim.topic)));
        sentences.shuffle(&mut rng);
        drafts.push(Draft {
            claim: ci,
            relevant: false,
            sentences,
            quote: 0,
            pattern: 0,
        });
    }
    drafts.shuffle(&mut rng);

    let claims: Vec<Claim> = seeds
        .iter()
        .enumerate()
        .map(|(i, s)| Claim::new(format!("c{i:04}"), s.text.clone()))
        .collect();
    let mut articles = Vec::with_capacity(drafts.len());
    let mut labels = Vec::new();
    let mut planted = Vec::new();
    for (ai, draft) in drafts.into_iter().enumerate() {
        let id = format!("a{ai:04}");
        if draft.relevant {
            labels.push(RelevanceLabel {
                claim_id: claims[draft.claim].id.clone(),
                article_id: id.clone(),
                label: 1,
            });
            planted.push(PlantedSentences {
                claim_id: claims[draft.claim].id.clone(),
                article_id: id.clone(),
                quote_index: draft.quote,
                pattern_index: draft.pattern,
            });
        }
        articles.push(Article {
            id,
            source: String::from(*pick(&mut rng, &SOURCES)),
            sentences: sentence_list(draft.sentences),
        });
    }
    labels.sort_by(|a, b| a.claim_id.cmp(&b.claim_id).then(a.article_id.cmp(&b.article_id)));
    planted.sort_by(|a, b| a.claim_id.cmp(&b.claim_id));
    Ok(SyntheticCorpus {
        claims,
        articles,
        labels,
        planted,
    })
}
