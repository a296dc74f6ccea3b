use std::collections::{BTreeMap, BTreeSet};

use super::{Entry, NGramModel, Smoothing, BOS, BOS_ID, EOS, MAX_ORDER, UNK, UNK_ID};
use crate::error::{Error, Result};

/// Raw n-gram counts over padded sentences. `counts[n - 1]` holds n-grams of
/// length `n`; n-grams ending in `<s>` are never counted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NGramCounts {
    pub order: usize,
    pub counts: Vec<BTreeMap<Vec<String>, u64>>,
}

impl NGramCounts {
    pub fn get(&self, ngram: &[&str]) -> u64 {
        let key: Vec<String> = ngram.iter().map(|s| s.to_string()).collect();
        self.counts
            .get(ngram.len().wrapping_sub(1))
            .and_then(|t| t.get(&key))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(BTreeMap::is_empty)
    }
}

fn padded<S: AsRef<str>>(sentence: &[S], order: usize) -> Vec<&str> {
    let mut out = vec![BOS; order - 1];
    out.extend(sentence.iter().map(AsRef::as_ref));
    out.push(EOS);
    out
}

fn check_order(order: usize) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return Err(Error::InvalidParameter(format!(
            "n-gram order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    Ok(())
}

fn check_words<S: AsRef<str>>(sentences: &[Vec<S>]) -> Result<()> {
    for sentence in sentences {
        for w in sentence {
            let w = w.as_ref();
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::InvalidParameter(format!("invalid word {w:?}")));
            }
            if w == BOS || w == EOS {
                return Err(Error::InvalidParameter(format!(
                    "sentence sentinel {w} may not appear inside a sentence"
                )));
            }
        }
    }
    Ok(())
}

/// Counts every n-gram of length 1..=order. Each sentence gets `order - 1`
/// leading `<s>` and one trailing `</s>`.
pub fn count_ngrams<S: AsRef<str>>(sentences: &[Vec<S>], order: usize) -> Result<NGramCounts> {
    check_order(order)?;
    check_words(sentences)?;
    let mut counts = vec![BTreeMap::new(); order];
    for sentence in sentences {
        let toks = padded(sentence, order);
        for n in 1..=order {
            for window in toks.windows(n) {
                if window[n - 1] == BOS {
                    continue;
                }
                let key: Vec<String> = window.iter().map(|s| s.to_string()).collect();
                *counts[n - 1].entry(key).or_insert(0) += 1;
            }
        }
    }
    Ok(NGramCounts { order, counts })
}

/// Trains a backoff model.
///
/// Kneser-Ney falls back to add-k(0.1) when every n-gram count is one; the
/// fallback is recorded in [`NGramModel::warnings`].
pub fn train<S: AsRef<str>>(
    sentences: &[Vec<S>],
    order: usize,
    smoothing: Smoothing,
) -> Result<NGramModel> {
    check_order(order)?;
    smoothing.validate()?;
    if !sentences.iter().any(|s| !s.is_empty()) {
        return Err(Error::LanguageModel(
            "training needs at least one non-empty sentence".into(),
        ));
    }
    let raw = count_ngrams(sentences, order)?;

    let mut warnings = Vec::new();
    let mut smoothing = smoothing;
    if let Smoothing::KneserNey { discount } = smoothing {
        if raw.counts.iter().all(|t| t.values().all(|&c| c == 1)) {
            let fallback = Smoothing::AddK(0.1);
            warnings.push(format!(
                "every n-gram count is 1, so Kneser-Ney discounting (d={discount}) has no \
                 count statistics to work with; falling back to {fallback}"
            ));
            smoothing = fallback;
        }
    }

    let vocab: BTreeSet<&str> = raw.counts[0]
        .keys()
        .map(|k| k[0].as_str())
        .filter(|w| *w != UNK)
        .collect();
    let mut model = NGramModel::with_vocab(order, vocab.into_iter().map(String::from));
    model.smoothing = Some(smoothing);
    model.warnings = warnings;

    let to_ids = |key: &[String]| -> Vec<u32> { key.iter().map(|w| model.word_id(w)).collect() };
    let raw_ids: Vec<BTreeMap<Vec<u32>, u64>> = raw
        .counts
        .iter()
        .map(|t| t.iter().map(|(k, &c)| (to_ids(k), c)).collect())
        .collect();

    // Counts the estimator sees at each order: raw at the top (and for
    // mle/add-k everywhere); continuation counts below the top for KN, except
    // n-grams starting with <s>, which cannot be extended to the left.
    let mut est: Vec<BTreeMap<Vec<u32>, u64>> = raw_ids.clone();
    if matches!(smoothing, Smoothing::KneserNey { .. }) {
        for n in 1..order {
            let mut adjusted: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
            for key in raw_ids[n].keys() {
                *adjusted.entry(key[1..].to_vec()).or_insert(0) += 1;
            }
            for (key, &c) in &raw_ids[n - 1] {
                if key[0] == BOS_ID {
                    adjusted.insert(key.clone(), c);
                }
            }
            est[n - 1] = adjusted;
        }
    }

    let events: Vec<u32> = model.event_ids().collect();
    let n_events = events.len() as f64;

    // Unigrams.
    let uni = &est[0];
    let total: f64 = uni.values().map(|&c| c as f64).sum();
    let types = uni.len() as f64;
    for &w in &events {
        let c = uni.get(&vec![w]).copied().unwrap_or(0) as f64;
        let p = match smoothing {
            Smoothing::Mle => c / total,
            Smoothing::AddK(k) => (c + k) / (total + k * n_events),
            Smoothing::KneserNey { discount } => {
                (c - discount).max(0.0) / total + discount * types / total / n_events
            }
        };
        model.insert(
            vec![w],
            Entry {
                ln_prob: p.ln(),
                ln_backoff: None,
            },
        );
    }
    model.insert(
        vec![BOS_ID],
        Entry {
            ln_prob: f64::NEG_INFINITY,
            ln_backoff: None,
        },
    );
    debug_assert!(model.entry(&[UNK_ID]).is_some());

    for n in 2..=order {
        // Group n-grams by context; BTreeMap order keeps each context's
        // continuations contiguous.
        let mut groups: Vec<(Vec<u32>, Vec<(u32, u64)>)> = Vec::new();
        for (key, &c) in &est[n - 1] {
            let (ctx, w) = key.split_at(n - 1);
            match groups.last_mut() {
                Some((last, items)) if last.as_slice() == ctx => items.push((w[0], c)),
                _ => groups.push((ctx.to_vec(), vec![(w[0], c)])),
            }
        }
        for (ctx, items) in groups {
            let total: f64 = items.iter().map(|&(_, c)| c as f64).sum();
            let seen = items.len() as f64;
            let mut lower_mass = 0.0;
            let mut new_entries = Vec::with_capacity(items.len());
            for &(w, c) in &items {
                let c = c as f64;
                let lower = model.ln_prob_upto(&ctx[1..], w, n - 1).exp();
                let p = match smoothing {
                    Smoothing::Mle => c / total,
                    Smoothing::AddK(k) => (c + k) / (total + k * n_events),
                    Smoothing::KneserNey { discount } => {
                        (c - discount) / total + discount * seen / total * lower
                    }
                };
                lower_mass += lower;
                let mut key = ctx.clone();
                key.push(w);
                new_entries.push((key, p.ln()));
            }
            let ln_backoff = match smoothing {
                Smoothing::KneserNey { discount } => (discount * seen / total).ln(),
                Smoothing::Mle => f64::NEG_INFINITY,
                Smoothing::AddK(k) => {
                    let missing = k * (n_events - seen) / (total + k * n_events);
                    let room = 1.0 - lower_mass;
                    if missing <= 0.0 {
                        f64::NEG_INFINITY
                    } else if room <= 0.0 {
                        debug_assert!(false, "no lower-order mass left to back off into");
                        0.0
                    } else {
                        (missing / room).ln()
                    }
                }
            };
            for (key, ln_prob) in new_entries {
                model.insert(
                    key,
                    Entry {
                        ln_prob,
                        ln_backoff: None,
                    },
                );
            }
            let ctx_entry = model.tables[ctx.len() - 1]
                .entry(ctx)
                .or_insert(Entry {
                    ln_prob: f64::NEG_INFINITY,
                    ln_backoff: None,
                });
            ctx_entry.ln_backoff = Some(ln_backoff);
        }
    }
    Ok(model)
}
