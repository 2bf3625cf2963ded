//! Interpolated Kneser-Ney n-gram models with a single absolute discount.
//!
//! Training pads every sentence with `order - 1` start symbols and one end
//! symbol, and maps tokens seen fewer than [`MIN_COUNT`] times to `<unk>`.
//! The highest order uses raw counts; lower orders use continuation counts
//! (the number of distinct left extensions). The unigram level is itself
//! discounted and interpolated with a uniform distribution over every
//! vocabulary entry except `<s>`, so `<unk>` always receives some mass.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tokenize, MediaDietDataset};
use crate::probe::PromptSpec;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const MIN_COUNT: u64 = 2;
pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_DISCOUNT: f64 = 0.75;

const FORMAT_NAME: &str = "mediadiet-kneser-ney";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("discount must lie in (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("candidate {0:?} is not a single token")]
    MultiTokenCandidate(String),
    #[error("prompt {0:?} does not contain exactly one blank")]
    BlankMissing(String),
    #[error("background table line {line}: {message}")]
    BadBackground { line: usize, message: String },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type Gram = Vec<u32>;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct ContextStats {
    total: u64,
    types: u64,
}

/// Numerators and context totals for one order.
#[derive(Debug, Clone, Default, PartialEq)]
struct Level {
    numerators: HashMap<Gram, u64>,
    contexts: HashMap<Gram, ContextStats>,
}

impl Level {
    fn from_numerators(numerators: HashMap<Gram, u64>) -> Self {
        let mut contexts: HashMap<Gram, ContextStats> = HashMap::new();
        for (gram, &n) in &numerators {
            let stats = contexts.entry(gram[..gram.len() - 1].to_vec()).or_default();
            stats.total += n;
            stats.types += 1;
        }
        Level { numerators, contexts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    discount: f64,
    dataset_id: String,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// `levels[k - 1]` holds order-k statistics.
    levels: Vec<Level>,
}

impl NGramModel {
    /// Trains on a media diet dataset.
    pub fn train(dataset: &MediaDietDataset, order: usize, discount: f64) -> Result<Self, NgramError> {
        let sentences: Vec<&[String]> = dataset.sentences().map(|s| s.tokens.as_slice()).collect();
        Self::train_on_sentences(dataset.id(), &sentences, order, discount)
    }

    pub fn train_on_sentences<S: AsRef<[String]>>(
        dataset_id: &str,
        sentences: &[S],
        order: usize,
        discount: f64,
    ) -> Result<Self, NgramError> {
        if order == 0 {
            return Err(NgramError::InvalidOrder(order));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(NgramError::InvalidDiscount(discount));
        }
        if sentences.iter().all(|s| s.as_ref().is_empty()) {
            return Err(NgramError::EmptyDataset);
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for s in sentences {
            for t in s.as_ref() {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut vocab: Vec<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        vocab.extend(
            freq.iter().filter(|(t, &c)| c >= MIN_COUNT && ![BOS, EOS, UNK].contains(t)).map(|(t, _)| t.to_string()),
        );
        vocab.sort();
        let index: HashMap<String, u32> = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let unk = index[UNK];
        let bos = index[BOS];
        let eos = index[EOS];

        let mut top: HashMap<Gram, u64> = HashMap::new();
        for s in sentences {
            let tokens = s.as_ref();
            if tokens.is_empty() {
                continue;
            }
            let mut padded: Vec<u32> = vec![bos; order - 1];
            padded.extend(tokens.iter().map(|t| *index.get(t.as_str()).unwrap_or(&unk)));
            padded.push(eos);
            for window in padded.windows(order) {
                *top.entry(window.to_vec()).or_default() += 1;
            }
        }
        Ok(Self::from_top_counts(dataset_id.to_string(), order, discount, vocab, index, top))
    }

    fn from_top_counts(
        dataset_id: String,
        order: usize,
        discount: f64,
        vocab: Vec<String>,
        index: HashMap<String, u32>,
        top: HashMap<Gram, u64>,
    ) -> Self {
        let mut levels = vec![Level::default(); order];
        levels[order - 1] = Level::from_numerators(top);
        for k in (1..order).rev() {
            let mut continuation: HashMap<Gram, u64> = HashMap::new();
            for gram in levels[k].numerators.keys() {
                *continuation.entry(gram[1..].to_vec()).or_default() += 1;
            }
            levels[k - 1] = Level::from_numerators(continuation);
        }
        NGramModel { order, discount, dataset_id, vocab, index, levels }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    /// Sorted vocabulary, including `<s>`, `</s>` and `<unk>`.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.index[UNK])
    }

    /// Highest-order n-gram counts, sorted, as token strings.
    pub fn counts(&self) -> BTreeMap<Vec<String>, u64> {
        self.levels[self.order - 1]
            .numerators
            .iter()
            .map(|(g, &c)| (g.iter().map(|&i| self.vocab[i as usize].clone()).collect(), c))
            .collect()
    }

    /// Interpolated Kneser-Ney probability of `word` after `context`.
    ///
    /// The context is left-padded with `<s>` or truncated to its last
    /// `order - 1` tokens. Unknown tokens take the `<unk>` path.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let need = self.order - 1;
        let mut ctx: Vec<u32> = Vec::with_capacity(need);
        if context.len() < need {
            ctx.extend(std::iter::repeat_n(self.index[BOS], need - context.len()));
            ctx.extend(context.iter().map(|t| self.id(t)));
        } else {
            ctx.extend(context[context.len() - need..].iter().map(|t| self.id(t)));
        }
        self.prob_ids(&ctx, self.id(word))
    }

    fn prob_ids(&self, context: &[u32], word: u32) -> f64 {
        let k = context.len() + 1;
        let level = &self.levels[k - 1];
        let d = self.discount;
        if k == 1 {
            let uniform = if self.vocab[word as usize] == BOS { 0.0 } else { 1.0 / (self.vocab.len() - 1) as f64 };
            let stats = level.contexts.get(context).copied().unwrap_or_default();
            if stats.total == 0 {
                return uniform;
            }
            let a = level.numerators.get(&vec![word]).copied().unwrap_or(0) as f64;
            let total = stats.total as f64;
            return (a - d).max(0.0) / total + d * stats.types as f64 / total * uniform;
        }
        let lower = self.prob_ids(&context[1..], word);
        match level.contexts.get(context) {
            None => lower,
            Some(stats) => {
                let mut gram = context.to_vec();
                gram.push(word);
                let a = level.numerators.get(&gram).copied().unwrap_or(0) as f64;
                let total = stats.total as f64;
                (a - d).max(0.0) / total + d * stats.types as f64 / total * lower
            }
        }
    }

    /// Product of the probabilities of every window that contains the blank
    /// once `candidate` is substituted. Windows predict only real tokens
    /// (the end symbol is not scored); left context is padded with `<s>`.
    pub fn window_product(&self, left: &[String], candidate: &str, right: &[String]) -> f64 {
        let pad = self.order - 1;
        let mut sentence: Vec<&str> = vec![BOS; pad];
        sentence.extend(left.iter().map(String::as_str));
        let blank = sentence.len();
        sentence.push(candidate);
        sentence.extend(right.iter().map(String::as_str));
        let last = (blank + self.order - 1).min(sentence.len() - 1);
        (blank..=last).map(|j| self.prob(&sentence[j - pad..j], sentence[j])).product()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NgramError> {
        let dump = ModelDump {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            order: self.order,
            discount: self.discount,
            dataset_id: self.dataset_id.clone(),
            vocab: self.vocab.clone(),
            ngrams: self.counts().into_iter().map(|(tokens, count)| NgramCount { tokens, count }).collect(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &dump).map_err(|e| NgramError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NgramError> {
        let file = File::open(path)?;
        let dump: ModelDump =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| NgramError::Format(e.to_string()))?;
        if dump.format != FORMAT_NAME || dump.version != FORMAT_VERSION {
            return Err(NgramError::Format(format!("unsupported format {} v{}", dump.format, dump.version)));
        }
        if dump.order == 0 {
            return Err(NgramError::InvalidOrder(0));
        }
        let index: HashMap<String, u32> = dump.vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for special in [BOS, EOS, UNK] {
            if !index.contains_key(special) {
                return Err(NgramError::Format(format!("vocabulary lacks {special}")));
            }
        }
        let mut top = HashMap::new();
        for NgramCount { tokens, count } in dump.ngrams {
            if tokens.len() != dump.order {
                return Err(NgramError::Format(format!("n-gram {tokens:?} has wrong order")));
            }
            let gram = tokens
                .iter()
                .map(|t| {
                    index.get(t).copied().ok_or_else(|| NgramError::Format(format!("token {t:?} not in vocabulary")))
                })
                .collect::<Result<Gram, _>>()?;
            top.insert(gram, count);
        }
        Ok(Self::from_top_counts(dump.dataset_id, dump.order, dump.discount, dump.vocab, index, top))
    }
}

#[derive(Serialize, Deserialize)]
struct NgramCount {
    tokens: Vec<String>,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelDump {
    format: String,
    version: u32,
    order: usize,
    discount: f64,
    dataset_id: String,
    vocab: Vec<String>,
    ngrams: Vec<NgramCount>,
}

pub const DEFAULT_BACKGROUND_FLOOR: f64 = 1e-9;

/// Background unigram probabilities used to normalize n-gram cloze scores.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundUnigrams {
    freq: HashMap<String, f64>,
    floor: f64,
}

impl BackgroundUnigrams {
    pub fn new(freq: HashMap<String, f64>, floor: f64) -> Result<Self, NgramError> {
        if floor.is_nan() || floor <= 0.0 {
            return Err(NgramError::BadBackground { line: 0, message: format!("floor must be positive, got {floor}") });
        }
        let total: f64 = freq.values().sum();
        if total > 1.0 + 1e-9 {
            return Err(NgramError::BadBackground { line: 0, message: format!("probabilities sum to {total} > 1") });
        }
        Ok(BackgroundUnigrams { freq, floor })
    }

    /// Relative token frequencies over a dataset.
    pub fn from_dataset(dataset: &MediaDietDataset) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut total = 0u64;
        for s in dataset.sentences() {
            for t in &s.tokens {
                *counts.entry(t.clone()).or_default() += 1;
                total += 1;
            }
        }
        let freq = counts.into_iter().map(|(t, c)| (t, c as f64 / total.max(1) as f64)).collect();
        BackgroundUnigrams { freq, floor: DEFAULT_BACKGROUND_FLOOR }
    }

    /// Reads `token<TAB>probability` lines.
    pub fn read_tsv<R: BufRead>(reader: R, floor: f64) -> Result<Self, NgramError> {
        let mut freq = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| NgramError::BadBackground { line: idx + 1, message };
            let (token, p) = line.split_once('\t').ok_or_else(|| bad("expected token<TAB>probability".into()))?;
            let p: f64 = p.trim().parse().map_err(|e| bad(format!("{e}")))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(format!("probability {p} outside [0, 1]")));
            }
            freq.insert(token.to_string(), p);
        }
        Self::new(freq, floor)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NgramError> {
        Self::read_tsv(BufReader::new(File::open(path)?), DEFAULT_BACKGROUND_FLOOR)
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let sorted: BTreeMap<&String, &f64> = self.freq.iter().collect();
        for (t, p) in sorted {
            writeln!(w, "{t}\t{p}")?;
        }
        Ok(())
    }

    pub fn prob(&self, token: &str) -> f64 {
        self.freq.get(token).copied().unwrap_or(self.floor)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.freq.contains_key(token)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

/// Tokenizes a candidate and checks that it is exactly one token.
pub fn single_token(candidate: &str) -> Result<String, NgramError> {
    let mut tokens = tokenize(candidate);
    if tokens.len() != 1 {
        return Err(NgramError::MultiTokenCandidate(candidate.to_string()));
    }
    Ok(tokens.remove(0))
}

/// Cloze score of `candidate` in the prompt's blank: the product of all
/// blank-covering window probabilities divided by the background
/// probability of the candidate.
pub fn ngram_cloze_score(
    model: &NGramModel,
    background: &BackgroundUnigrams,
    prompt: &PromptSpec,
    candidate: &str,
) -> Result<f64, NgramError> {
    let token = single_token(candidate)?;
    let (left, right) = prompt.context_tokens().map_err(|_| NgramError::BlankMissing(prompt.prompt_id.clone()))?;
    if !model.contains(&token) {
        log::warn!("candidate {token:?} is not in the vocabulary of {}; scoring via {UNK}", model.dataset_id);
    }
    Ok(model.window_product(&left, &token, &right) / background.prob(&token))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn degenerate_single_sentence() {
        let m = NGramModel::train_on_sentences("d", &[toks("a a")], 3, 0.75).unwrap();
        assert_eq!(m.vocab(), ["</s>", "<s>", "<unk>", "a"]);
    }

    #[test]
    fn rare_tokens_become_unknown() {
        let m = NGramModel::train_on_sentences("d", &[toks("a b a")], 3, 0.75).unwrap();
        assert!(!m.contains("b"));
        assert_eq!(m.prob(&["a"], "b"), m.prob(&["a"], UNK));
    }

    #[test]
    fn start_symbol_never_predicted() {
        let m = NGramModel::train_on_sentences("d", &[toks("a b c"), toks("c b a")], 3, 0.75).unwrap();
        assert_eq!(m.prob(&["a", "b"], BOS), 0.0);
        assert_eq!(m.prob(&[], BOS), 0.0);
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let m = NGramModel::train_on_sentences("d", &[toks("a b c"), toks("c b a")], 3, 0.75).unwrap();
        // "c a" never occurs as a bigram context, nor does "a" as a unigram context
        // preceded by "c"; prob must equal the bigram level for context "a".
        let full = m.prob(&["c", "a"], "b");
        let lower = m.prob_ids(&[m.id("a")], m.id("b"));
        assert_eq!(full, lower);
        let unseen = m.prob(&["</s>", "</s>"], "b");
        assert_eq!(unseen, m.prob_ids(&[], m.id("b")));
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = [toks("a a")];
        assert!(matches!(NGramModel::train_on_sentences("d", &s, 3, 1.0), Err(NgramError::InvalidDiscount(_))));
        assert!(matches!(NGramModel::train_on_sentences("d", &s, 0, 0.5), Err(NgramError::InvalidOrder(0))));
        let empty: [Vec<String>; 0] = [];
        assert!(matches!(NGramModel::train_on_sentences("d", &empty, 3, 0.5), Err(NgramError::EmptyDataset)));
    }

    #[test]
    fn background_floor_and_sum_check() {
        let bg = BackgroundUnigrams::read_tsv("a\t0.5\nb\t0.25\n".as_bytes(), 1e-9).unwrap();
        assert_eq!(bg.prob("a"), 0.5);
        assert_eq!(bg.prob("zzz"), 1e-9);
        assert!(BackgroundUnigrams::read_tsv("a\t0.7\nb\t0.7\n".as_bytes(), 1e-9).is_err());
    }

    #[test]
    fn multi_token_candidate_rejected() {
        assert!(matches!(single_token("a major"), Err(NgramError::MultiTokenCandidate(_))));
    }
}
