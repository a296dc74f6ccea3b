//! CTC decoding and scoring over per-frame log-score matrices.

mod beam;
mod exhaustive;
mod loss;

pub use beam::beam_decode;
pub use exhaustive::{exhaustive_decode, EXHAUSTIVE_PATH_LIMIT};
pub use loss::{ctc_loss, ctc_loss_text};

use std::cmp::Ordering;
use std::f64::consts::LN_10;

use crate::augment::Vocabulary;
use crate::error::{Error, Result};
use crate::lm::NGramModel;

/// Tolerance on a normalized row's log-sum-exp.
pub const NORMALIZED_TOLERANCE: f64 = 1e-6;

/// `ln(Σ exp(x))` without overflow; all `-inf` gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// T×V frame scores in the log domain, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    pub utterance_id: String,
    pub frame_rate: f64,
    frames: usize,
    symbols: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl LogitMatrix {
    pub fn new(
        utterance_id: impl Into<String>,
        frame_rate: f64,
        frames: usize,
        symbols: usize,
        values: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if frames < 1 || symbols < 2 {
            return Err(Error::Logits(format!(
                "need T >= 1 and V >= 2, got T={frames} V={symbols}"
            )));
        }
        if values.len() != frames * symbols {
            return Err(Error::Logits(format!(
                "{} values for a {frames}x{symbols} matrix",
                values.len()
            )));
        }
        if !(frame_rate.is_finite() && frame_rate > 0.0) {
            return Err(Error::Logits(format!("frame rate {frame_rate} is not positive")));
        }
        let m = LogitMatrix {
            utterance_id: utterance_id.into(),
            frame_rate,
            frames,
            symbols,
            values,
            normalized,
        };
        if normalized {
            for t in 0..frames {
                let lse = log_sum_exp(m.row(t));
                if !(lse.abs() <= NORMALIZED_TOLERANCE) {
                    return Err(Error::Logits(format!(
                        "frame {t} is flagged normalized but its log-sum-exp is {lse}"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn from_rows(
        utterance_id: impl Into<String>,
        frame_rate: f64,
        rows: &[Vec<f64>],
        normalized: bool,
    ) -> Result<Self> {
        let symbols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != symbols) {
            return Err(Error::Logits("rows have different lengths".into()));
        }
        let values = rows.iter().flatten().copied().collect();
        LogitMatrix::new(utterance_id, frame_rate, rows.len(), symbols, values, normalized)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.symbols..(t + 1) * self.symbols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.symbols)
    }

    /// Log-softmax of every row.
    pub fn normalize(&self) -> Result<LogitMatrix> {
        let mut values = Vec::with_capacity(self.values.len());
        for (t, row) in self.rows().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteFrame { frame: t });
            }
            let lse = log_sum_exp(row);
            values.extend(row.iter().map(|x| x - lse));
        }
        Ok(LogitMatrix {
            utterance_id: self.utterance_id.clone(),
            frame_rate: self.frame_rate,
            frames: self.frames,
            symbols: self.symbols,
            values,
            normalized: true,
        })
    }

    pub(crate) fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if self.symbols != vocab.len() {
            return Err(Error::Logits(format!(
                "matrix `{}` has V={} but the vocabulary has {} symbols",
                self.utterance_id,
                self.symbols,
                vocab.len()
            )));
        }
        Ok(())
    }

    /// Per-frame argmax, ties to the lowest index.
    pub fn argmax_path(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                let mut best = 0;
                for (i, &x) in row.iter().enumerate().skip(1) {
                    if x > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn normalize(raw: &LogitMatrix) -> Result<LogitMatrix> {
    raw.normalize()
}

/// Merges repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Best-path decoding: argmax per frame, collapsed.
pub fn greedy_decode(m: &LogitMatrix, vocab: &Vocabulary) -> Result<String> {
    m.check_vocab(vocab)?;
    Ok(vocab.decode(&collapse(&m.argmax_path(), vocab.blank())))
}

#[derive(Debug, Clone, Copy)]
pub struct DecodeParams<'a> {
    pub beam_width: usize,
    /// Weight on the natural-log LM score.
    pub lm_weight: f64,
    /// Added once per completed word.
    pub word_bonus: f64,
    pub lm: Option<&'a NGramModel>,
}

impl Default for DecodeParams<'_> {
    fn default() -> Self {
        DecodeParams {
            beam_width: 100,
            lm_weight: 1.5,
            word_bonus: 1.0,
            lm: None,
        }
    }
}

impl<'a> DecodeParams<'a> {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width < 1 {
            return Err(Error::InvalidParameter("beam width must be at least 1".into()));
        }
        if !self.lm_weight.is_finite() || self.lm_weight < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "LM weight must be finite and non-negative, got {}",
                self.lm_weight
            )));
        }
        if !self.word_bonus.is_finite() {
            return Err(Error::InvalidParameter("word bonus must be finite".into()));
        }
        Ok(())
    }

    /// The LM takes part in scoring only with a positive weight.
    pub(crate) fn active_lm(&self) -> Option<&'a NGramModel> {
        self.lm.filter(|_| self.lm_weight > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHypothesis {
    pub text: String,
    pub acoustic_logp: f64,
    /// 0 when no LM is consulted.
    pub lm_log10: f64,
    pub words: usize,
    pub combined: f64,
}

impl ScoredHypothesis {
    pub fn new(
        text: String,
        acoustic_logp: f64,
        lm_log10: f64,
        words: usize,
        lm_weight: f64,
        word_bonus: f64,
    ) -> Self {
        let combined = fused_score(acoustic_logp, lm_log10, words, lm_weight, word_bonus);
        ScoredHypothesis {
            text,
            acoustic_logp,
            lm_log10,
            words,
            combined,
        }
    }
}

pub fn fused_score(acoustic: f64, lm_log10: f64, words: usize, lm_weight: f64, word_bonus: f64) -> f64 {
    acoustic + lm_weight * LN_10 * lm_log10 + word_bonus * words as f64
}

/// Best-first: higher combined score, then lexicographically smaller text.
pub(crate) fn rank(a: &ScoredHypothesis, b: &ScoredHypothesis) -> Ordering {
    b.combined
        .partial_cmp(&a.combined)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.text.cmp(&b.text))
}
