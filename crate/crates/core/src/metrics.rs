//! Edit-distance scoring: WER, CER, and per-language splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::Serialize;
use serde_json::json;

use crate::augment::{labeled_words, LabeledWordSeq};
use crate::corpus::{Language, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EditStats {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditStats {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `None` for an empty reference.
    pub fn rate(&self) -> Option<f64> {
        (self.ref_len > 0).then(|| self.errors() as f64 / self.ref_len as f64)
    }
}

impl Add for EditStats {
    type Output = EditStats;

    fn add(self, o: EditStats) -> EditStats {
        EditStats {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            ref_len: self.ref_len + o.ref_len,
        }
    }
}

impl AddAssign for EditStats {
    fn add_assign(&mut self, o: EditStats) {
        *self = *self + o;
    }
}

impl Sum for EditStats {
    fn sum<I: Iterator<Item = EditStats>>(iter: I) -> EditStats {
        iter.fold(EditStats::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { r: usize, h: usize },
    Substitute { r: usize, h: usize },
    Delete { r: usize },
    Insert { h: usize },
}

/// Minimal unit-cost alignment, in reference order. Backtrace prefers
/// match/substitution, then insertion, then deletion.
pub fn align<T: PartialEq>(reference: &[T], hyp: &[T]) -> Vec<EditOp> {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for (j, cell) in d.iter_mut().enumerate().take(w) {
        *cell = j;
    }
    for i in 1..=n {
        d[i * w] = i;
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = diag.min(ins).min(del);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hyp[j - 1];
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                i -= 1;
                j -= 1;
                ops.push(if same {
                    EditOp::Match { r: i, h: j }
                } else {
                    EditOp::Substitute { r: i, h: j }
                });
                continue;
            }
        }
        if j > 0 && here == d[i * w + j - 1] + 1 {
            j -= 1;
            ops.push(EditOp::Insert { h: j });
        } else {
            i -= 1;
            ops.push(EditOp::Delete { r: i });
        }
    }
    ops.reverse();
    ops
}

fn tally(ops: &[EditOp], ref_len: usize) -> EditStats {
    let mut s = EditStats {
        ref_len,
        ..EditStats::default()
    };
    for op in ops {
        match op {
            EditOp::Match { .. } => {}
            EditOp::Substitute { .. } => s.substitutions += 1,
            EditOp::Delete { .. } => s.deletions += 1,
            EditOp::Insert { .. } => s.insertions += 1,
        }
    }
    s
}

pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditStats {
    tally(&align(reference, hyp), reference.len())
}

/// Pooled WER: total edits over total reference words.
pub fn wer_corpus<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<S>)]) -> Result<f64> {
    let total: EditStats = pairs
        .iter()
        .map(|(r, h)| {
            let r: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
            let h: Vec<&str> = h.iter().map(AsRef::as_ref).collect();
            edit_distance(&r, &h)
        })
        .sum();
    total
        .rate()
        .ok_or_else(|| Error::Metrics("corpus has no reference words".into()))
}

/// Character error rate; spaces count as characters.
pub fn cer(reference: &str, hyp: &str) -> Result<f64> {
    char_stats(reference, hyp)
        .rate()
        .ok_or_else(|| Error::Metrics("empty reference".into()))
}

pub fn char_stats(reference: &str, hyp: &str) -> EditStats {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hyp.chars().collect();
    edit_distance(&r, &h)
}

/// Per-language split of one global alignment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LanguageStats {
    pub by_language: BTreeMap<Language, EditStats>,
    /// Insertions against an empty reference, which have no language.
    pub unattributed_insertions: usize,
}

impl LanguageStats {
    pub fn get(&self, lang: Language) -> EditStats {
        self.by_language.get(&lang).copied().unwrap_or_default()
    }

    pub fn total(&self) -> EditStats {
        let mut t: EditStats = self.by_language.values().copied().sum();
        t.insertions += self.unattributed_insertions;
        t
    }

    fn merge(&mut self, other: &LanguageStats) {
        for (&l, &s) in &other.by_language {
            *self.by_language.entry(l).or_default() += s;
        }
        self.unattributed_insertions += other.unattributed_insertions;
    }
}

/// Attributes each edit to a reference word's language. Insertions go to
/// the nearest preceding reference word, or the first one at the start.
pub fn wer_by_language<S: AsRef<str>>(reference: &LabeledWordSeq, hyp: &[S]) -> LanguageStats {
    let r: Vec<&str> = reference.words();
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let langs: Vec<Language> = reference.iter().map(|w| w.lang).collect();
    let mut out = LanguageStats::default();
    for &l in &langs {
        out.by_language.entry(l).or_default().ref_len += 1;
    }
    let mut prev: Option<usize> = None;
    for op in align(&r, &h) {
        let (ri, kind) = match op {
            EditOp::Match { r, .. } => {
                prev = Some(r);
                continue;
            }
            EditOp::Substitute { r, .. } => (Some(r), 0),
            EditOp::Delete { r } => (Some(r), 1),
            EditOp::Insert { .. } => (prev.or((!langs.is_empty()).then_some(0)), 2),
        };
        let Some(ri) = ri else {
            out.unattributed_insertions += 1;
            continue;
        };
        let s = out.by_language.entry(langs[ri]).or_default();
        match kind {
            0 => s.substitutions += 1,
            1 => s.deletions += 1,
            _ => s.insertions += 1,
        }
        if kind != 2 {
            prev = Some(ri);
        }
    }
    out
}

/// Lowercased words with tag tokens removed: the default scoring view of a
/// transcript in any scheme.
pub fn scoring_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter(|t| !(t.starts_with('<') && t.ends_with('>')))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub words: EditStats,
    pub chars: EditStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub utterances: Vec<UtteranceScore>,
    pub words: EditStats,
    pub chars: EditStats,
    pub languages: LanguageStats,
}

/// Scores hypotheses (by utterance id) against manifest references.
///
/// Both sides are reduced to [`scoring_words`] unless `raw` is set, in
/// which case hypotheses are compared as written.
pub fn evaluate(refs: &[Utterance], hyps: &HashMap<String, String>, raw: bool) -> Result<Evaluation> {
    let missing: Vec<&str> = refs
        .iter()
        .filter(|u| !hyps.contains_key(&u.id))
        .map(|u| u.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Metrics(format!("no hypothesis for: {}", missing.join(", "))));
    }
    let mut utterances = Vec::with_capacity(refs.len());
    let mut languages = LanguageStats::default();
    for u in refs {
        let mut labeled = labeled_words(u);
        if !raw {
            for w in &mut labeled.0 {
                w.word = w.word.to_lowercase();
            }
        }
        let hyp_words: Vec<String> = if raw {
            hyps[&u.id].split_whitespace().map(str::to_string).collect()
        } else {
            scoring_words(&hyps[&u.id])
        };
        let reference = labeled.words().join(" ");
        let hypothesis = hyp_words.join(" ");
        let by_lang = wer_by_language(&labeled, &hyp_words);
        languages.merge(&by_lang);
        utterances.push(UtteranceScore {
            id: u.id.clone(),
            words: by_lang.total(),
            chars: char_stats(&reference, &hypothesis),
            reference,
            hypothesis,
        });
    }
    let words: EditStats = utterances.iter().map(|u| u.words).sum();
    let chars: EditStats = utterances.iter().map(|u| u.chars).sum();
    if words.ref_len == 0 {
        return Err(Error::Metrics("corpus has no reference words".into()));
    }
    Ok(Evaluation {
        utterances,
        words,
        chars,
        languages,
    })
}

fn pct(s: &EditStats) -> String {
    s.rate().map_or_else(|| "n/a".into(), |r| format!("{:.2}", 100.0 * r))
}

impl Evaluation {
    pub fn wer(&self) -> f64 {
        self.words.rate().expect("non-empty reference")
    }

    pub fn cer(&self) -> Option<f64> {
        self.chars.rate()
    }

    /// Most errors first, ties by id.
    pub fn worst(&self, n: usize) -> Vec<&UtteranceScore> {
        let mut v: Vec<&UtteranceScore> = self.utterances.iter().filter(|u| u.words.errors() > 0).collect();
        v.sort_by(|a, b| b.words.errors().cmp(&a.words.errors()).then_with(|| a.id.cmp(&b.id)));
        v.truncate(n);
        v
    }

    pub fn to_text(&self, worst_n: usize) -> String {
        let mut out = String::new();
        let w = &self.words;
        let _ = writeln!(
            out,
            "WER {}% ({} errors: {} sub, {} del, {} ins; {} words, {} utterances)",
            pct(w),
            w.errors(),
            w.substitutions,
            w.deletions,
            w.insertions,
            w.ref_len,
            self.utterances.len()
        );
        let _ = writeln!(out, "CER {}%", pct(&self.chars));
        for (lang, s) in &self.languages.by_language {
            let _ = writeln!(out, "WER[{lang}] {}% ({} errors / {} words)", pct(s), s.errors(), s.ref_len);
        }
        if self.languages.unattributed_insertions > 0 {
            let _ = writeln!(out, "unattributed insertions {}", self.languages.unattributed_insertions);
        }
        let worst = self.worst(worst_n);
        if !worst.is_empty() {
            let _ = writeln!(out, "worst utterances:");
            for u in worst {
                let _ = writeln!(
                    out,
                    "  {}\t{} errors\tREF: {}\tHYP: {}",
                    u.id,
                    u.words.errors(),
                    u.reference,
                    u.hypothesis
                );
            }
        }
        out
    }

    /// One JSON object per line: each utterance, then a summary.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            let rec = json!({
                "type": "utterance",
                "id": u.id,
                "words": u.words,
                "chars": u.chars,
                "wer": u.words.rate(),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        let langs: BTreeMap<String, serde_json::Value> = self
            .languages
            .by_language
            .iter()
            .map(|(l, s)| (l.code().to_string(), json!({ "stats": s, "wer": s.rate() })))
            .collect();
        let summary = json!({
            "type": "summary",
            "utterances": self.utterances.len(),
            "words": self.words,
            "chars": self.chars,
            "wer": self.wer(),
            "cer": self.cer(),
            "languages": langs,
            "unattributed_insertions": self.languages.unattributed_insertions,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}
