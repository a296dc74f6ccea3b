use std::collections::HashMap;

use super::{collapse, log_add, rank, DecodeParams, LogitMatrix, ScoredHypothesis};
use crate::augment::Vocabulary;
use crate::error::{Error, Result};
use crate::lm::NGramModel;

pub const EXHAUSTIVE_PATH_LIMIT: usize = 1_000_000;

/// Words of a decoded string: separated by spaces, empties dropped.
pub(crate) fn split_words(text: &str) -> Vec<&str> {
    text.split(' ').filter(|w| !w.is_empty()).collect()
}

/// Decodes by enumerating every frame path, summing path probabilities per
/// collapsed string, and fusing the LM and word bonus on each string.
///
/// Only usable for tiny matrices (V^T ≤ [`EXHAUSTIVE_PATH_LIMIT`]).
pub fn exhaustive_decode(
    m: &LogitMatrix,
    vocab: &Vocabulary,
    lm: Option<&NGramModel>,
    lm_weight: f64,
    word_bonus: f64,
) -> Result<ScoredHypothesis> {
    m.check_vocab(vocab)?;
    let params = DecodeParams {
        beam_width: 1,
        lm_weight,
        word_bonus,
        lm,
    };
    params.validate()?;
    let (frames, v) = (m.frames(), m.symbols());
    let paths = (v as f64).powi(frames as i32);
    if paths > EXHAUSTIVE_PATH_LIMIT as f64 {
        return Err(Error::SearchTooLarge {
            paths,
            limit: EXHAUSTIVE_PATH_LIMIT,
        });
    }

    let mut marginals: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut path = vec![0usize; frames];
    loop {
        let logp: f64 = path.iter().enumerate().map(|(t, &s)| m.row(t)[s]).sum();
        let labels = collapse(&path, vocab.blank());
        let slot = marginals.entry(labels).or_insert(f64::NEG_INFINITY);
        *slot = log_add(*slot, logp);

        // Odometer increment, last frame fastest.
        let mut t = frames;
        loop {
            if t == 0 {
                break;
            }
            t -= 1;
            path[t] += 1;
            if path[t] < v {
                break;
            }
            path[t] = 0;
        }
        if t == 0 && path[0] == 0 {
            break;
        }
    }

    let lm = params.active_lm();
    let mut best: Option<ScoredHypothesis> = None;
    for (labels, acoustic) in marginals {
        let text = vocab.decode(&labels);
        let words = split_words(&text);
        let lm_log10 = lm.map_or(0.0, |lm| lm.score_sentence(&words));
        let n_words = words.len();
        let hyp = ScoredHypothesis::new(text, acoustic, lm_log10, n_words, lm_weight, word_bonus);
        best = match best {
            Some(b) if rank(&b, &hyp).is_le() => Some(b),
            _ => Some(hyp),
        };
    }
    Ok(best.expect("at least one path exists"))
}
