//! Word n-gram language models: training, backoff scoring, perplexity and
//! ARPA serialization.
//!
//! Scores are kept as natural logs internally and converted to log10 at the
//! public scoring surface and in ARPA files.

mod arpa;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

pub use arpa::{read_arpa, read_arpa_str, write_arpa, write_arpa_string};
pub use train::{count_ngrams, train, NGramCounts};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub(crate) const UNK_ID: u32 = 0;
pub(crate) const BOS_ID: u32 = 1;
pub(crate) const EOS_ID: u32 = 2;

pub const MAX_ORDER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    Mle,
    AddK(f64),
    /// Interpolated Kneser-Ney with a single fixed discount.
    KneserNey { discount: f64 },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::KneserNey { discount: 0.75 }
    }
}

impl Smoothing {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Smoothing::Mle => Ok(()),
            Smoothing::AddK(k) if k > 0.0 && k.is_finite() => Ok(()),
            Smoothing::AddK(k) => Err(Error::InvalidParameter(format!(
                "add-k constant must be positive, got {k}"
            ))),
            Smoothing::KneserNey { discount } if discount > 0.0 && discount < 1.0 => Ok(()),
            Smoothing::KneserNey { discount } => Err(Error::InvalidParameter(format!(
                "Kneser-Ney discount must lie in (0, 1), got {discount}"
            ))),
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoothing::Mle => write!(f, "mle"),
            Smoothing::AddK(k) => write!(f, "add-k:{k}"),
            Smoothing::KneserNey { discount } => write!(f, "kn:{discount}"),
        }
    }
}

impl FromStr for Smoothing {
    type Err = String;

    /// `mle`, `add-k[:K]` (default 0.1) or `kn[:D]` (default 0.75).
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> std::result::Result<f64, String> {
            arg.map_or(Ok(default), |a| {
                a.parse::<f64>().map_err(|e| format!("bad smoothing parameter {a:?}: {e}"))
            })
        };
        let smoothing = match name {
            "mle" if arg.is_none() => Smoothing::Mle,
            "add-k" | "add_k" => Smoothing::AddK(num(0.1)?),
            "kn" | "kneser-ney" | "kneser_ney" => Smoothing::KneserNey {
                discount: num(0.75)?,
            },
            _ => return Err(format!("unknown smoothing {s:?}")),
        };
        smoothing.validate().map_err(|e| e.to_string())?;
        Ok(smoothing)
    }
}

impl serde::Serialize for Smoothing {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for Smoothing {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub ln_prob: f64,
    pub ln_backoff: Option<f64>,
}

/// Backoff n-gram model. `tables[n - 1]` holds the n-grams of length `n`.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    tables: Vec<HashMap<Vec<u32>, Entry>>,
    smoothing: Option<Smoothing>,
    warnings: Vec<String>,
}

impl NGramModel {
    /// Empty model holding the sentinels plus `words` (deduplicated, order
    /// preserved after the sentinels).
    pub(crate) fn with_vocab(order: usize, words: impl IntoIterator<Item = String>) -> Self {
        let mut model = NGramModel {
            order,
            words: Vec::new(),
            ids: HashMap::new(),
            tables: vec![HashMap::new(); order],
            smoothing: None,
            warnings: Vec::new(),
        };
        for w in [UNK, BOS, EOS].into_iter().map(String::from).chain(words) {
            model.intern(w);
        }
        model
    }

    fn intern(&mut self, word: String) -> u32 {
        if let Some(&id) = self.ids.get(&word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.ids.insert(word.clone(), id);
        self.words.push(word);
        id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Smoothing actually used in training; `None` for models read from ARPA.
    pub fn smoothing(&self) -> Option<Smoothing> {
        self.smoothing
    }

    /// Non-fatal training notes, e.g. a smoothing fallback.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Vocabulary including the sentinels.
    pub fn vocab(&self) -> &[String] {
        &self.words
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    /// Id of `word`, or of `<unk>` when out of vocabulary.
    pub fn word_id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn entry(&self, ngram: &[u32]) -> Option<&Entry> {
        if ngram.is_empty() || ngram.len() > self.order {
            return None;
        }
        self.tables[ngram.len() - 1].get(ngram)
    }

    pub fn ngram_count(&self, n: usize) -> usize {
        self.tables.get(n.wrapping_sub(1)).map_or(0, HashMap::len)
    }

    pub(crate) fn tables(&self) -> &[HashMap<Vec<u32>, Entry>] {
        &self.tables
    }

    pub(crate) fn insert(&mut self, ngram: Vec<u32>, entry: Entry) {
        let n = ngram.len();
        self.tables[n - 1].insert(ngram, entry);
    }

    /// Natural-log probability of `word` after `history` using only tables up
    /// to `max_order`.
    pub(crate) fn ln_prob_upto(&self, history: &[u32], word: u32, max_order: usize) -> f64 {
        let keep = max_order.saturating_sub(1).min(history.len());
        let mut hist = &history[history.len() - keep..];
        let mut key = [0u32; MAX_ORDER];
        let mut acc = 0.0;
        loop {
            let n = hist.len() + 1;
            key[..hist.len()].copy_from_slice(hist);
            key[hist.len()] = word;
            if let Some(e) = self.tables[n - 1].get(&key[..n]) {
                return acc + e.ln_prob;
            }
            if hist.is_empty() {
                return f64::NEG_INFINITY;
            }
            if let Some(b) = self.tables[hist.len() - 1].get(hist).and_then(|e| e.ln_backoff) {
                acc += b;
            }
            hist = &hist[1..];
        }
    }

    /// Natural-log probability from word ids; histories longer than
    /// `order - 1` are truncated to the most recent words.
    pub fn ln_prob(&self, history: &[u32], word: u32) -> f64 {
        self.ln_prob_upto(history, word, self.order)
    }

    /// log10 P(word | history); out-of-vocabulary words score as `<unk>`.
    pub fn score_word(&self, history: &[&str], word: &str) -> f64 {
        let ids: Vec<u32> = history.iter().map(|w| self.word_id(w)).collect();
        self.score_word_ids(&ids, self.word_id(word))
    }

    pub fn score_word_ids(&self, history: &[u32], word: u32) -> f64 {
        self.ln_prob(history, word) / std::f64::consts::LN_10
    }

    /// History for the first word of a sentence.
    pub fn start_history(&self) -> Vec<u32> {
        vec![BOS_ID; self.order - 1]
    }

    pub fn eos_id(&self) -> u32 {
        EOS_ID
    }

    /// Chain-rule log10 probability including the `</s>` transition.
    pub fn score_sentence(&self, words: &[&str]) -> f64 {
        let mut history: Vec<&str> = vec![BOS; self.order - 1];
        let mut total = 0.0;
        for &w in words.iter().chain(std::iter::once(&EOS)) {
            total += self.score_word(&history, w);
            history.push(w);
        }
        total
    }

    /// 10^(-total log10 / tokens), counting one `</s>` per sentence.
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<f64> {
        let mut total = 0.0;
        let mut tokens = 0usize;
        for sentence in sentences {
            let words: Vec<&str> = sentence.iter().map(AsRef::as_ref).collect();
            total += self.score_sentence(&words);
            tokens += words.len() + 1;
        }
        if tokens == 0 {
            return Err(Error::LanguageModel(
                "perplexity needs at least one scored token".into(),
            ));
        }
        Ok(10f64.powf(-total / tokens as f64))
    }

    /// Words that may follow a context: everything but `<s>`.
    pub fn event_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.words.len() as u32).filter(|&id| id != BOS_ID)
    }

    /// Contexts (n-grams carrying a backoff weight) of the model.
    pub fn contexts(&self) -> Vec<Vec<u32>> {
        let mut out: Vec<Vec<u32>> = self
            .tables
            .iter()
            .flat_map(|t| t.iter().filter(|(_, e)| e.ln_backoff.is_some()).map(|(k, _)| k.clone()))
            .collect();
        out.sort();
        out
    }
}

/// Splits a transcript into LM tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
