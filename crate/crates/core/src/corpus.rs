//! Code-switched utterances, the line-delimited manifest format, and corpus
//! accounting.
//!
//! A manifest holds one JSON object per line:
//!
//! ```text
//! {"id":"u1","lang_pair":"zul-eng","duration":2.000,"spans":[{"lang":"eng","start":0.000,"end":0.800,"text":"what if"}]}
//! ```
//!
//! The optional `audio` key sits between `id` and `lang_pair`. Times are
//! written with three decimal places.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Language {
    Eng,
    Zul,
    Xho,
    Sot,
    Tsn,
}

impl Language {
    pub const ALL: [Language; 5] = [
        Language::Eng,
        Language::Zul,
        Language::Xho,
        Language::Sot,
        Language::Tsn,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::Eng => "eng",
            Language::Zul => "zul",
            Language::Xho => "xho",
            Language::Sot => "sot",
            Language::Tsn => "tsn",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Language::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| format!("unknown language code {s:?}"))
    }
}

/// A Bantu language paired with English.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LangPair {
    #[serde(rename = "zul-eng")]
    ZulEng,
    #[serde(rename = "xho-eng")]
    XhoEng,
    #[serde(rename = "sot-eng")]
    SotEng,
    #[serde(rename = "tsn-eng")]
    TsnEng,
}

impl LangPair {
    pub const ALL: [LangPair; 4] = [
        LangPair::ZulEng,
        LangPair::XhoEng,
        LangPair::SotEng,
        LangPair::TsnEng,
    ];

    pub fn bantu(self) -> Language {
        match self {
            LangPair::ZulEng => Language::Zul,
            LangPair::XhoEng => Language::Xho,
            LangPair::SotEng => Language::Sot,
            LangPair::TsnEng => Language::Tsn,
        }
    }

    /// English first, then the Bantu member.
    pub fn languages(self) -> [Language; 2] {
        [Language::Eng, self.bantu()]
    }

    pub fn contains(self, lang: Language) -> bool {
        lang == Language::Eng || lang == self.bantu()
    }

    pub fn code(self) -> &'static str {
        match self {
            LangPair::ZulEng => "zul-eng",
            LangPair::XhoEng => "xho-eng",
            LangPair::SotEng => "sot-eng",
            LangPair::TsnEng => "tsn-eng",
        }
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LangPair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        LangPair::ALL
            .into_iter()
            .find(|p| p.code() == s)
            .ok_or_else(|| format!("unknown language pair {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageSpan {
    pub lang: Language,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

impl LanguageSpan {
    pub fn new(lang: Language, start_s: f64, end_s: f64, text: impl Into<String>) -> Self {
        LanguageSpan {
            lang,
            start_s,
            end_s,
            text: text.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.text.split(' ')
    }
}

/// Checks the span text rule: non-empty words separated by single spaces, no
/// tag delimiters.
pub(crate) fn check_span_text(text: &str) -> std::result::Result<(), String> {
    if text.is_empty() {
        return Err("span text is empty".into());
    }
    if let Some(c) = text.chars().find(|c| *c == '<' || *c == '>') {
        return Err(format!("span text {text:?} contains tag delimiter {c:?}"));
    }
    if let Some(c) = text.chars().find(|c| c.is_whitespace() && *c != ' ') {
        return Err(format!("span text {text:?} contains whitespace {c:?}"));
    }
    if text.split(' ').any(str::is_empty) {
        return Err(format!(
            "span text {text:?} has leading, trailing or repeated spaces"
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio_ref: Option<String>,
    pub lang_pair: LangPair,
    pub spans: Vec<LanguageSpan>,
    pub duration_s: f64,
}

impl Utterance {
    /// Builds an utterance, checking every invariant.
    pub fn new(
        id: impl Into<String>,
        audio_ref: Option<String>,
        lang_pair: LangPair,
        spans: Vec<LanguageSpan>,
        duration_s: f64,
    ) -> Result<Self> {
        let utt = Utterance {
            id: id.into(),
            audio_ref,
            lang_pair,
            spans,
            duration_s,
        };
        utt.validate()?;
        Ok(utt)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::InvalidUtterance {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(fail("id is empty".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(fail(format!("duration {} is not positive", self.duration_s)));
        }
        for (i, span) in self.spans.iter().enumerate() {
            if !(span.start_s.is_finite() && span.end_s.is_finite()) || span.start_s < 0.0 {
                return Err(fail(format!("span {i} has invalid times")));
            }
            if span.end_s <= span.start_s {
                return Err(fail(format!(
                    "span {i} ends at {} which is not after its start {}",
                    span.end_s, span.start_s
                )));
            }
            if !self.lang_pair.contains(span.lang) {
                return Err(fail(format!(
                    "span {i} language {} is not part of {}",
                    span.lang, self.lang_pair
                )));
            }
            check_span_text(&span.text).map_err(|m| fail(format!("span {i}: {m}")))?;
        }
        for (i, pair) in self.spans.windows(2).enumerate() {
            if pair[1].start_s < pair[0].start_s {
                return Err(fail(format!("spans {i} and {} are out of order", i + 1)));
            }
            if pair[0].end_s > pair[1].start_s {
                return Err(fail(format!("spans {i} and {} overlap", i + 1)));
            }
        }
        if let Some(last) = self.spans.last() {
            if last.end_s > self.duration_s {
                return Err(fail(format!(
                    "last span ends at {} after the utterance duration {}",
                    last.end_s, self.duration_s
                )));
            }
        }
        Ok(())
    }

    /// Span texts joined by single spaces.
    pub fn flat_transcript(&self) -> String {
        flat_transcript(self)
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, Language)> {
        self.spans
            .iter()
            .flat_map(|s| s.words().map(move |w| (w, s.lang)))
    }
}

pub fn flat_transcript(utt: &Utterance) -> String {
    let texts: Vec<&str> = utt.spans.iter().map(|s| s.text.as_str()).collect();
    texts.join(" ")
}

/// Reads a manifest. Blank lines are skipped; ids must be unique.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_manifest(reader: impl BufRead) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<manifest>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let utt = parse_manifest_line(&line, idx + 1)?;
        if !seen.insert(utt.id.clone()) {
            return Err(Error::InvalidUtterance {
                id: utt.id,
                message: "duplicate id".into(),
            });
        }
        out.push(utt);
    }
    Ok(out)
}

pub fn parse_manifest_line(line: &str, line_no: usize) -> Result<Utterance> {
    let err = |field: &str, message: String| Error::ManifestParse {
        line: line_no,
        field: field.to_string(),
        message,
    };
    let value: Value =
        serde_json::from_str(line).map_err(|e| err("<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| err("<record>", "record is not an object".into()))?;

    let str_field = |v: Option<&Value>, name: &str| -> Result<String> {
        match v {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(err(name, "expected a string".into())),
            None => Err(err(name, "missing".into())),
        }
    };
    let num_field = |v: Option<&Value>, name: &str| -> Result<f64> {
        match v {
            Some(Value::Number(n)) => n
                .as_f64()
                .ok_or_else(|| err(name, "number out of range".into())),
            Some(_) => Err(err(name, "expected a number".into())),
            None => Err(err(name, "missing".into())),
        }
    };

    let id = str_field(obj.get("id"), "id")?;
    let audio_ref = match obj.get("audio") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(err("audio", "expected a string".into())),
    };
    let lang_pair = str_field(obj.get("lang_pair"), "lang_pair")?
        .parse::<LangPair>()
        .map_err(|m| err("lang_pair", m))?;
    let duration_s = num_field(obj.get("duration"), "duration")?;
    let raw_spans = match obj.get("spans") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(err("spans", "expected an array".into())),
        None => return Err(err("spans", "missing".into())),
    };
    let mut spans = Vec::with_capacity(raw_spans.len());
    for (i, raw) in raw_spans.iter().enumerate() {
        let name = |f: &str| format!("spans[{i}].{f}");
        let span = raw
            .as_object()
            .ok_or_else(|| err(&format!("spans[{i}]"), "expected an object".into()))?;
        let lang = str_field(span.get("lang"), &name("lang"))?
            .parse::<Language>()
            .map_err(|m| err(&name("lang"), m))?;
        let start_s = num_field(span.get("start"), &name("start"))?;
        let end_s = num_field(span.get("end"), &name("end"))?;
        let text = str_field(span.get("text"), &name("text"))?;
        spans.push(LanguageSpan {
            lang,
            start_s,
            end_s,
            text,
        });
    }
    Utterance::new(id, audio_ref, lang_pair, spans, duration_s)
}

/// Serializes one utterance as a manifest line (no trailing newline).
pub fn manifest_line(utt: &Utterance) -> String {
    let quote = |s: &str| serde_json::to_string(s).expect("strings always serialize");
    let mut line = format!("{{\"id\":{}", quote(&utt.id));
    if let Some(audio) = &utt.audio_ref {
        line.push_str(&format!(",\"audio\":{}", quote(audio)));
    }
    line.push_str(&format!(
        ",\"lang_pair\":\"{}\",\"duration\":{:.3},\"spans\":[",
        utt.lang_pair, utt.duration_s
    ));
    for (i, span) in utt.spans.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&format!(
            "{{\"lang\":\"{}\",\"start\":{:.3},\"end\":{:.3},\"text\":{}}}",
            span.lang,
            span.start_s,
            span.end_s,
            quote(&span.text)
        ));
    }
    line.push_str("]}");
    line
}

pub fn write_manifest(path: impl AsRef<Path>, utts: &[Utterance]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for utt in utts {
        writeln!(out, "{}", manifest_line(utt)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PairStats {
    pub utterances: usize,
    pub hours: f64,
}

/// Per-pair utterance counts and durations. Every pair is always present.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub pairs: BTreeMap<LangPair, PairStats>,
}

impl CorpusStats {
    pub fn get(&self, pair: LangPair) -> PairStats {
        self.pairs.get(&pair).copied().unwrap_or_default()
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8}  {:>8}  {:>9}", "pair", "utts", "hours")?;
        for (pair, stats) in &self.pairs {
            writeln!(f, "{:<8}  {:>8}  {:>9.2}", pair, stats.utterances, stats.hours)?;
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn corpus_stats(utts: &[Utterance]) -> CorpusStats {
    let mut acc: BTreeMap<LangPair, (usize, CompensatedSum)> = LangPair::ALL
        .into_iter()
        .map(|p| (p, (0, CompensatedSum::default())))
        .collect();
    for utt in utts {
        let entry = acc.entry(utt.lang_pair).or_default();
        entry.0 += 1;
        entry.1.add(utt.duration_s);
    }
    CorpusStats {
        pairs: acc
            .into_iter()
            .map(|(p, (n, secs))| {
                (
                    p,
                    PairStats {
                        utterances: n,
                        hours: secs.value() / 3600.0,
                    },
                )
            })
            .collect(),
    }
}

#[cfg(test)]
pub(crate) use tests::u1 as example_utterance;
