use super::{log_add, LogitMatrix};
use crate::augment::Vocabulary;
use crate::error::{Error, Result};

/// Frames needed to emit `target`: one per label plus a blank between each
/// adjacent repeat.
pub(crate) fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `target` under a normalized matrix, summed over
/// every alignment by the forward recursion on the blank-interleaved target.
pub fn ctc_loss(m: &LogitMatrix, target: &[usize], vocab: &Vocabulary) -> Result<f64> {
    m.check_vocab(vocab)?;
    if !m.is_normalized() {
        return Err(Error::Logits(format!(
            "matrix `{}` must be normalized before computing a loss",
            m.utterance_id
        )));
    }
    let blank = vocab.blank();
    if let Some(&bad) = target.iter().find(|&&s| s == blank || s >= vocab.len()) {
        return Err(Error::TargetSymbol { symbol: bad });
    }
    let frames = m.frames();
    let needed = min_frames(target);
    if needed > frames {
        return Err(Error::TargetTooLong { needed, frames });
    }

    // Extended sequence: blank, l1, blank, l2, ..., lL, blank.
    let ext_len = 2 * target.len() + 1;
    let label = |s: usize| if s.is_multiple_of(2) { blank } else { target[s / 2] };

    let mut alpha = vec![f64::NEG_INFINITY; ext_len];
    let first = m.row(0);
    alpha[0] = first[blank];
    if ext_len > 1 {
        alpha[1] = first[label(1)];
    }
    let mut next = vec![f64::NEG_INFINITY; ext_len];
    for t in 1..frames {
        let row = m.row(t);
        for s in 0..ext_len {
            let mut acc = alpha[s];
            if s >= 1 {
                acc = log_add(acc, alpha[s - 1]);
            }
            if s >= 2 && label(s) != blank && label(s) != label(s - 2) {
                acc = log_add(acc, alpha[s - 2]);
            }
            next[s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + row[label(s)]
            };
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    let total = if ext_len > 1 {
        log_add(alpha[ext_len - 1], alpha[ext_len - 2])
    } else {
        alpha[0]
    };
    Ok(-total)
}

/// [`ctc_loss`] for a transcript rendered in the vocabulary's scheme.
pub fn ctc_loss_text(m: &LogitMatrix, text: &str, vocab: &Vocabulary) -> Result<f64> {
    let target = if text.is_empty() {
        Vec::new()
    } else {
        vocab.encode(text)?
    };
    ctc_loss(m, &target, vocab)
}
