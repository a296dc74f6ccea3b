//! Frame-level language identification: reference labels from span
//! timestamps, accuracy, cross-entropy, and the weighted CTC + LID loss.

use std::fmt;
use std::str::FromStr;

use crate::corpus::{Language, Utterance};
use crate::error::{Error, Result};

/// 20 ms frames.
pub const DEFAULT_FRAME_RATE: f64 = 50.0;

/// Overlaps closer than this count as equal.
const TIE_TOLERANCE: f64 = 1e-9;

/// Posterior class name for frames outside every span.
pub const SILENCE: &str = "sil";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FrameClass {
    Silence,
    Lang(Language),
}

impl fmt::Display for FrameClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameClass::Silence => f.write_str(SILENCE),
            FrameClass::Lang(l) => write!(f, "{l}"),
        }
    }
}

impl FromStr for FrameClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == SILENCE {
            Ok(FrameClass::Silence)
        } else {
            s.parse().map(FrameClass::Lang)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub labels: Vec<FrameClass>,
    pub frame_rate: f64,
}

impl FrameLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Frames labeled `class`.
    pub fn count(&self, class: FrameClass) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }
}

fn check_rate(frame_rate: f64) -> Result<()> {
    if frame_rate.is_finite() && frame_rate > 0.0 {
        Ok(())
    } else {
        Err(Error::LangId(format!("frame rate {frame_rate} is not positive")))
    }
}

/// Labels frame `i`, covering `[i/rate, (i+1)/rate)`, with the class owning
/// most of that interval. Uncovered time counts for silence. Ties go to the
/// language whose first overlapping span comes earliest, and any language
/// beats silence.
pub fn frames_from_spans(utt: &Utterance, frame_rate: f64, frames: usize) -> Result<FrameLabels> {
    check_rate(frame_rate)?;
    if frames == 0 {
        return Err(Error::LangId("need at least one frame".into()));
    }
    let mut labels = Vec::with_capacity(frames);
    // Per frame: (language, summed overlap), in order of first overlap.
    let mut owners: Vec<(Language, f64)> = Vec::with_capacity(2);
    for i in 0..frames {
        let (a, b) = (i as f64 / frame_rate, (i + 1) as f64 / frame_rate);
        owners.clear();
        for span in &utt.spans {
            let overlap = span.end_s.min(b) - span.start_s.max(a);
            if overlap <= 0.0 {
                continue;
            }
            match owners.iter_mut().find(|(l, _)| *l == span.lang) {
                Some(o) => o.1 += overlap,
                None => owners.push((span.lang, overlap)),
            }
        }
        let silence = (b - a) - owners.iter().map(|o| o.1).sum::<f64>();
        let mut best: Option<(Language, f64)> = None;
        for &(lang, overlap) in &owners {
            if best.is_none_or(|(_, top)| overlap > top + TIE_TOLERANCE) {
                best = Some((lang, overlap));
            }
        }
        labels.push(match best {
            Some((lang, overlap)) if overlap >= silence - TIE_TOLERANCE => FrameClass::Lang(lang),
            _ => FrameClass::Silence,
        });
    }
    Ok(FrameLabels { labels, frame_rate })
}

/// Fraction of matching frames. With `ignore_silence`, frames where either
/// side is silence are left out of both counts, which keeps the measure
/// symmetric.
pub fn lid_accuracy(pred: &FrameLabels, gold: &FrameLabels, ignore_silence: bool) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::LangId(format!(
            "{} predicted frames vs {} reference frames",
            pred.len(),
            gold.len()
        )));
    }
    let (hits, counted) = lid_counts(pred, gold, ignore_silence);
    if counted == 0 {
        return Err(Error::LangId("no frames to score".into()));
    }
    Ok(hits as f64 / counted as f64)
}

/// (matching, counted) frames; the pair pools across utterances.
pub fn lid_counts(pred: &FrameLabels, gold: &FrameLabels, ignore_silence: bool) -> (usize, usize) {
    let mut hits = 0;
    let mut counted = 0;
    for (&p, &g) in pred.labels.iter().zip(&gold.labels) {
        if ignore_silence && (p == FrameClass::Silence || g == FrameClass::Silence) {
            continue;
        }
        counted += 1;
        hits += usize::from(p == g);
    }
    (hits, counted)
}

/// Tolerance on a posterior row's sum.
pub const POSTERIOR_TOLERANCE: f64 = 1e-6;

/// Mean of `-ln posterior[gold]` over non-silence frames. `classes` names
/// the posterior columns.
pub fn lid_cross_entropy(posteriors: &[Vec<f64>], classes: &[FrameClass], gold: &FrameLabels) -> Result<f64> {
    let (sum, n) = lid_cross_entropy_sum(posteriors, classes, gold)?;
    if n == 0 {
        return Err(Error::LangId("every frame is silence".into()));
    }
    Ok(sum / n as f64)
}

/// (summed loss, unmasked frames).
pub fn lid_cross_entropy_sum(
    posteriors: &[Vec<f64>],
    classes: &[FrameClass],
    gold: &FrameLabels,
) -> Result<(f64, usize)> {
    if posteriors.len() != gold.len() {
        return Err(Error::LangId(format!(
            "{} posterior rows vs {} reference frames",
            posteriors.len(),
            gold.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for (t, (row, &g)) in posteriors.iter().zip(&gold.labels).enumerate() {
        if row.len() != classes.len() {
            return Err(Error::LangId(format!("row {t} has {} columns, expected {}", row.len(), classes.len())));
        }
        let total: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > POSTERIOR_TOLERANCE {
            return Err(Error::LangId(format!("row {t} is not a probability distribution (sum {total})")));
        }
        if g == FrameClass::Silence {
            continue;
        }
        let col = classes
            .iter()
            .position(|&c| c == g)
            .ok_or_else(|| Error::LangId(format!("no posterior column for {g}")))?;
        sum -= row[col].ln();
        n += 1;
    }
    Ok((sum, n))
}

/// Weight on the CTC term of the joint loss; the LID term gets `1 - λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiTaskWeights {
    lambda_ctc: f64,
}

impl MultiTaskWeights {
    /// λ must lie in (0.5, 1] so CTC always outweighs LID.
    pub fn new(lambda_ctc: f64) -> Result<Self> {
        if !(lambda_ctc > 0.5 && lambda_ctc <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "CTC weight must be in (0.5, 1], got {lambda_ctc}"
            )));
        }
        Ok(MultiTaskWeights { lambda_ctc })
    }

    pub fn lambda_ctc(&self) -> f64 {
        self.lambda_ctc
    }
}

/// `λ·l_ctc + (1 − λ)·l_lid`; exactly `l_ctc` when λ = 1.
pub fn multitask_loss(l_ctc: f64, l_lid: f64, w: MultiTaskWeights) -> Result<f64> {
    for (name, v) in [("CTC", l_ctc), ("LID", l_lid)] {
        if v.is_nan() || v < 0.0 {
            return Err(Error::InvalidParameter(format!("{name} loss must be non-negative, got {v}")));
        }
    }
    let lambda = w.lambda_ctc;
    if lambda == 1.0 {
        return Ok(l_ctc);
    }
    Ok(lambda * l_ctc + (1.0 - lambda) * l_lid)
}
