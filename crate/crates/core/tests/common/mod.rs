//! Shared test support: an independent Kneser-Ney reference built from
//! plain string counts, a fixed-table mock scorer, and fixture builders.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use mediadiet::backend::{BackendKind, FillResponse, GatewayError, MaskedScorer};
use mediadiet::probe::PromptSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Ngram = Vec<String>;

/// Interpolated Kneser-Ney evaluated straight from n-gram string counts.
///
/// Conventions: `order - 1` start pads, one end symbol, tokens seen fewer
/// than twice become `<unk>`, highest order on raw counts, lower orders on
/// continuation counts, and the unigram level interpolated with a uniform
/// distribution over every symbol except the start pad.
pub struct KnOracle {
    pub order: usize,
    pub discount: f64,
    pub vocab: BTreeSet<String>,
    /// `numerators[k]` maps order-(k+1) grams to their count (raw for the
    /// top order, continuation otherwise).
    numerators: Vec<BTreeMap<Ngram, u64>>,
}

impl KnOracle {
    pub fn new(sentences: &[Vec<String>], order: usize, discount: f64) -> Self {
        let mut freq: BTreeMap<&str, u64> = BTreeMap::new();
        for s in sentences {
            for t in s {
                *freq.entry(t).or_insert(0) += 1;
            }
        }
        let mut vocab: BTreeSet<String> = ["<s>", "</s>", "<unk>"].iter().map(|s| s.to_string()).collect();
        for (t, c) in &freq {
            if *c >= 2 {
                vocab.insert(t.to_string());
            }
        }
        let mut top: BTreeMap<Ngram, u64> = BTreeMap::new();
        for s in sentences.iter().filter(|s| !s.is_empty()) {
            let mut padded: Vec<String> = vec!["<s>".to_string(); order - 1];
            for t in s {
                padded.push(if vocab.contains(t) { t.clone() } else { "<unk>".to_string() });
            }
            padded.push("</s>".to_string());
            for i in 0..=padded.len() - order {
                *top.entry(padded[i..i + order].to_vec()).or_insert(0) += 1;
            }
        }
        let mut numerators = vec![BTreeMap::new(); order];
        numerators[order - 1] = top;
        for k in (0..order - 1).rev() {
            // distinct left extensions of each suffix
            let mut left: BTreeMap<Ngram, BTreeSet<String>> = BTreeMap::new();
            for gram in numerators[k + 1].keys() {
                left.entry(gram[1..].to_vec()).or_default().insert(gram[0].clone());
            }
            numerators[k] = left.into_iter().map(|(g, s)| (g, s.len() as u64)).collect();
        }
        KnOracle { order, discount, vocab, numerators }
    }

    fn map(&self, t: &str) -> String {
        if self.vocab.contains(t) {
            t.to_string()
        } else {
            "<unk>".to_string()
        }
    }

    /// Probability of `word` after exactly `order - 1` context tokens.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        assert_eq!(context.len(), self.order - 1);
        let ctx: Vec<String> = context.iter().map(|t| self.map(t)).collect();
        self.level_prob(&ctx, &self.map(word))
    }

    fn level_prob(&self, ctx: &[String], word: &str) -> f64 {
        let table = &self.numerators[ctx.len()];
        let mut total = 0u64;
        let mut types = 0u64;
        let mut own = 0u64;
        for (g, &c) in table.range(ctx.to_vec()..) {
            if g[..ctx.len()] != *ctx {
                break;
            }
            total += c;
            types += 1;
            if g[ctx.len()] == word {
                own = c;
            }
        }
        let lower = if ctx.is_empty() {
            if word == "<s>" {
                0.0
            } else {
                1.0 / (self.vocab.len() - 1) as f64
            }
        } else {
            self.level_prob(&ctx[1..], word)
        };
        if total == 0 {
            return lower;
        }
        let d = self.discount;
        (own as f64 - d).max(0.0) / total as f64 + d * types as f64 / total as f64 * lower
    }

    /// Every context of length `order - 1` observed in training.
    pub fn contexts(&self) -> Vec<Vec<String>> {
        let top = &self.numerators[self.order - 1];
        let set: BTreeSet<Vec<String>> = top.keys().map(|g| g[..self.order - 1].to_vec()).collect();
        set.into_iter().collect()
    }
}

/// Random sentences over a small Zipf-ish vocabulary, at most `max_tokens`
/// tokens in total.
pub fn random_corpus(seed: u64, max_tokens: usize) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = rng.random_range(3..40);
    let budget = rng.random_range(20..=max_tokens);
    let mut out = Vec::new();
    let mut used = 0;
    while used < budget {
        let len = rng.random_range(1..=12).min(budget - used);
        let sentence: Vec<String> = (0..len)
            .map(|_| {
                // squaring a uniform skews toward low ranks
                let u: f64 = rng.random();
                format!("w{}", (u * u * vocab_size as f64) as usize)
            })
            .collect();
        used += len;
        out.push(sentence);
    }
    out
}

/// Answers fill requests from a fixed probability table. Words missing from
/// the table are reported unsupported.
pub struct TableScorer {
    pub tag: String,
    pub probs: BTreeMap<String, f64>,
}

impl TableScorer {
    pub fn new(tag: &str, probs: &[(&str, f64)]) -> Self {
        TableScorer { tag: tag.to_string(), probs: probs.iter().map(|(w, p)| (w.to_string(), *p)).collect() }
    }
}

impl MaskedScorer for TableScorer {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn fill(&self, prompt: &PromptSpec, candidates: &[String]) -> Result<FillResponse, GatewayError> {
        let mut probs = BTreeMap::new();
        let mut unsupported = BTreeMap::new();
        for c in candidates {
            match self.probs.get(c) {
                Some(p) => {
                    probs.insert(c.clone(), *p);
                }
                None => {
                    unsupported.insert(c.clone(), "not in table".to_string());
                }
            }
        }
        Ok(FillResponse { prompt_id: prompt.prompt_id.clone(), probs, model_tag: self.tag.clone(), unsupported })
    }
}

pub fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}
