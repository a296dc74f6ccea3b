//! Implicit language-ID text encodings and CTC vocabularies.
//!
//! Two encodings mark which language each word belongs to without changing
//! the acoustic targets' words: *casing* (English upper, Bantu lower) and
//! *tags* (`<eng> what if </eng> <zul> etholwa </zul>`). Both have exact
//! inverses back to labeled words.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{LangPair, Language, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Plain,
    Casing,
    Tags,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Plain => "plain",
            Scheme::Casing => "casing",
            Scheme::Tags => "tags",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Scheme::Plain),
            "casing" => Ok(Scheme::Casing),
            "tags" => Ok(Scheme::Tags),
            other => Err(format!("unknown scheme {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledWord {
    pub word: String,
    pub lang: Language,
}

impl LabeledWord {
    pub fn new(word: impl Into<String>, lang: Language) -> Self {
        LabeledWord {
            word: word.into(),
            lang,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledWordSeq(pub Vec<LabeledWord>);

impl LabeledWordSeq {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledWord> {
        self.0.iter()
    }

    pub fn words(&self) -> Vec<&str> {
        self.0.iter().map(|w| w.word.as_str()).collect()
    }

    /// Maximal runs of same-language words.
    pub fn runs(&self) -> Vec<(Language, Vec<&str>)> {
        let mut runs: Vec<(Language, Vec<&str>)> = Vec::new();
        for w in &self.0 {
            match runs.last_mut() {
                Some((lang, words)) if *lang == w.lang => words.push(&w.word),
                _ => runs.push((w.lang, vec![&w.word])),
            }
        }
        runs
    }
}

impl<'a> IntoIterator for &'a LabeledWordSeq {
    type Item = &'a LabeledWord;
    type IntoIter = std::slice::Iter<'a, LabeledWord>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

pub fn labeled_words(utt: &Utterance) -> LabeledWordSeq {
    LabeledWordSeq(
        utt.words()
            .map(|(w, lang)| LabeledWord::new(w, lang))
            .collect(),
    )
}

pub fn render_plain(seq: &LabeledWordSeq) -> String {
    seq.words().join(" ")
}

fn case_word(word: &str, upper: bool) -> Result<String> {
    word.chars()
        .map(|c| {
            if c.is_ascii_alphabetic() {
                Ok(if upper {
                    c.to_ascii_uppercase()
                } else {
                    c.to_ascii_lowercase()
                })
            } else if c.is_alphabetic() {
                Err(Error::NoCaseMapping {
                    ch: c,
                    word: word.to_string(),
                })
            } else {
                Ok(c)
            }
        })
        .collect()
}

pub fn render_casing(seq: &LabeledWordSeq) -> Result<String> {
    let cased = seq
        .iter()
        .map(|w| case_word(&w.word, w.lang == Language::Eng))
        .collect::<Result<Vec<_>>>()?;
    Ok(cased.join(" "))
}

/// English words uppercase, Bantu words lowercase.
pub fn apply_casing(utt: &Utterance) -> Result<String> {
    render_casing(&labeled_words(utt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum WordCase {
    Upper,
    Lower,
    Caseless,
}

fn word_case(word: &str) -> Result<WordCase> {
    let mut upper = false;
    let mut lower = false;
    for c in word.chars() {
        if c.is_ascii_uppercase() {
            upper = true;
        } else if c.is_ascii_lowercase() {
            lower = true;
        } else if c.is_alphabetic() {
            return Err(Error::NoCaseMapping {
                ch: c,
                word: word.to_string(),
            });
        }
    }
    match (upper, lower) {
        (true, true) => Err(Error::MixedCase(word.to_string())),
        (true, false) => Ok(WordCase::Upper),
        (false, true) => Ok(WordCase::Lower),
        (false, false) => Ok(WordCase::Caseless),
    }
}

/// Recovers labeled words from a cased string. Words without letters take the
/// language of the nearest preceding cased word, else the nearest following
/// one, else the Bantu language.
pub fn invert_casing(text: &str, pair: LangPair) -> Result<LabeledWordSeq> {
    if text.is_empty() {
        return Ok(LabeledWordSeq::default());
    }
    let mut cases = Vec::new();
    for (i, word) in text.split(' ').enumerate() {
        if word.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "empty word at position {i} in cased text {text:?}"
            )));
        }
        cases.push((word, word_case(word)?));
    }
    let lang_of = |c: WordCase| match c {
        WordCase::Upper => Some(Language::Eng),
        WordCase::Lower => Some(pair.bantu()),
        WordCase::Caseless => None,
    };
    let first_known = cases.iter().find_map(|(_, c)| lang_of(*c));
    let mut prev = None;
    let mut out = Vec::with_capacity(cases.len());
    for (word, case) in cases {
        let lang = lang_of(case)
            .or(prev)
            .or(first_known)
            .unwrap_or(pair.bantu());
        prev = Some(lang);
        out.push(LabeledWord::new(word.to_ascii_lowercase(), lang));
    }
    Ok(LabeledWordSeq(out))
}

pub fn open_tag(lang: Language) -> String {
    format!("<{lang}>")
}

pub fn close_tag(lang: Language) -> String {
    format!("</{lang}>")
}

pub fn render_tags(seq: &LabeledWordSeq) -> String {
    let mut tokens: Vec<String> = Vec::new();
    for (lang, words) in seq.runs() {
        tokens.push(open_tag(lang));
        tokens.extend(words.into_iter().map(str::to_string));
        tokens.push(close_tag(lang));
    }
    tokens.join(" ")
}

/// Wraps each maximal same-language run in opening and closing tags.
pub fn apply_tags(utt: &Utterance) -> String {
    render_tags(&labeled_words(utt))
}

pub fn render(utt: &Utterance, scheme: Scheme) -> Result<String> {
    match scheme {
        Scheme::Plain => Ok(utt.flat_transcript()),
        Scheme::Casing => apply_casing(utt),
        Scheme::Tags => Ok(apply_tags(utt)),
    }
}

#[derive(Debug, PartialEq)]
enum TagToken {
    Open(Language),
    Close(Language),
}

fn classify_tag(token: &str, position: usize) -> Result<Option<TagToken>> {
    if !token.contains(['<', '>']) {
        return Ok(None);
    }
    let syntax = |message: String| Error::TagSyntax { position, message };
    let inner = token
        .strip_prefix('<')
        .and_then(|t| t.strip_suffix('>'))
        .ok_or_else(|| syntax(format!("malformed tag token {token:?}")))?;
    let (closing, name) = match inner.strip_prefix('/') {
        Some(name) => (true, name),
        None => (false, inner),
    };
    let lang = name
        .parse::<Language>()
        .map_err(|_| syntax(format!("unknown tag name {name:?}")))?;
    Ok(Some(if closing {
        TagToken::Close(lang)
    } else {
        TagToken::Open(lang)
    }))
}

/// Parses a tagged string back into labeled words.
///
/// Accepts exactly what [`render_tags`] produces: single-space separated
/// tokens, non-empty non-nested regions, and no two adjacent regions of the
/// same language.
pub fn parse_tags(text: &str) -> Result<LabeledWordSeq> {
    let mut out = Vec::new();
    if text.is_empty() {
        return Ok(LabeledWordSeq(out));
    }
    let mut open: Option<(Language, usize)> = None;
    let mut last_closed: Option<Language> = None;
    let mut region_words = 0usize;
    let mut position = 0usize;
    for token in text.split(' ') {
        let syntax = |message: String| Error::TagSyntax { position, message };
        if token.is_empty() {
            return Err(syntax("empty token (leading, trailing or repeated space)".into()));
        }
        match classify_tag(token, position)? {
            Some(TagToken::Open(lang)) => {
                if let Some((outer, _)) = open {
                    return Err(syntax(format!("<{lang}> nested inside <{outer}>")));
                }
                if last_closed == Some(lang) {
                    return Err(syntax(format!(
                        "adjacent <{lang}> regions must be merged"
                    )));
                }
                open = Some((lang, position));
                region_words = 0;
            }
            Some(TagToken::Close(lang)) => match open {
                Some((current, _)) if current == lang => {
                    if region_words == 0 {
                        return Err(syntax(format!("empty <{lang}> region")));
                    }
                    open = None;
                    last_closed = Some(lang);
                }
                Some((current, _)) => {
                    return Err(syntax(format!(
                        "unbalanced tag: </{lang}> closes <{current}>"
                    )))
                }
                None => return Err(syntax(format!("unbalanced tag: </{lang}> without opener"))),
            },
            None => match open {
                Some((lang, _)) => {
                    out.push(LabeledWord::new(token, lang));
                    region_words += 1;
                }
                None => return Err(syntax(format!("word {token:?} outside any tag region"))),
            },
        }
        position += token.len() + 1;
    }
    if let Some((lang, start)) = open {
        return Err(Error::TagSyntax {
            position: start,
            message: format!("unbalanced tag: <{lang}> is never closed"),
        });
    }
    Ok(LabeledWordSeq(out))
}

pub const BLANK: &str = "<blank>";
pub const SPACE: &str = " ";

/// CTC output inventory. Index 0 is the blank; the word separator is a single
/// space symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
    scheme: Scheme,
    lang_pair: Option<LangPair>,
    space: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    scheme: Scheme,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    lang_pair: Option<String>,
    symbols: Vec<String>,
}

fn tag_symbols(pair: LangPair) -> [String; 4] {
    [
        open_tag(Language::Eng),
        close_tag(Language::Eng),
        open_tag(pair.bantu()),
        close_tag(pair.bantu()),
    ]
}

impl Vocabulary {
    pub fn from_symbols(
        symbols: Vec<String>,
        scheme: Scheme,
        lang_pair: Option<LangPair>,
    ) -> Result<Self> {
        let bad = |m: String| Error::Vocabulary(m);
        if symbols.first().map(String::as_str) != Some(BLANK) {
            return Err(bad(format!("index 0 must be the blank symbol {BLANK:?}")));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(bad(format!("symbol {i} is empty")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(bad(format!("duplicate symbol {s:?}")));
            }
        }
        let space = *index
            .get(SPACE)
            .ok_or_else(|| bad("missing the space symbol".into()))?;
        match scheme {
            Scheme::Casing => {
                for s in &symbols {
                    let mut chars = s.chars();
                    if let (Some(c), None) = (chars.next(), chars.next()) {
                        if c.is_ascii_alphabetic() {
                            let other = if c.is_ascii_uppercase() {
                                c.to_ascii_lowercase()
                            } else {
                                c.to_ascii_uppercase()
                            };
                            if !index.contains_key(other.to_string().as_str()) {
                                return Err(bad(format!(
                                    "casing vocabulary has {c:?} but not {other:?}"
                                )));
                            }
                        }
                    }
                }
            }
            Scheme::Tags => {
                let pair = lang_pair
                    .ok_or_else(|| bad("tags vocabulary needs a language pair".into()))?;
                for tag in tag_symbols(pair) {
                    if !index.contains_key(&tag) {
                        return Err(bad(format!("tags vocabulary is missing {tag}")));
                    }
                }
            }
            Scheme::Plain => {}
        }
        Ok(Vocabulary {
            symbols,
            index,
            scheme,
            lang_pair,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn blank(&self) -> usize {
        0
    }

    pub fn space(&self) -> usize {
        self.space
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn lang_pair(&self) -> Option<LangPair> {
        self.lang_pair
    }

    /// Splits text into symbol ids. Under the tags scheme a space-delimited
    /// tag token maps to its single atomic symbol.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = Vec::with_capacity(text.len());
        for (i, token) in text.split(' ').enumerate() {
            if i > 0 {
                ids.push(self.space);
            }
            if self.scheme == Scheme::Tags {
                if let Some(&id) = self.index.get(token).filter(|_| token.starts_with('<')) {
                    ids.push(id);
                    continue;
                }
            }
            for c in token.chars() {
                let mut buf = [0u8; 4];
                let s: &str = c.encode_utf8(&mut buf);
                let id = self.id(s).ok_or_else(|| {
                    Error::Vocabulary(format!("symbol {s:?} of {text:?} is not in the vocabulary"))
                })?;
                ids.push(id);
            }
        }
        Ok(ids)
    }

    /// Concatenates non-blank symbols.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != 0)
            .map(|&i| self.symbols[i].as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            scheme: self.scheme,
            lang_pair: self.lang_pair.map(|p| p.code().to_string()),
            symbols: self.symbols.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::Vocabulary(e.to_string()))?;
        let pair = file
            .lang_pair
            .map(|p| p.parse::<LangPair>())
            .transpose()
            .map_err(Error::Vocabulary)?;
        Vocabulary::from_symbols(file.symbols, file.scheme, pair)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_json(&text)
    }
}

/// Builds a vocabulary from transcripts already rendered in `scheme`.
///
/// Symbols are blank, space, then the distinct characters in code-point
/// order. Casing closes the letter set under case mapping; tags appends the
/// pair's four tag symbols.
pub fn build_vocab(transcripts: &[String], scheme: Scheme, pair: LangPair) -> Result<Vocabulary> {
    let mut chars = BTreeSet::new();
    for text in transcripts {
        for token in text.split(' ').filter(|t| !t.is_empty()) {
            if token.contains(['<', '>']) {
                let is_tag = scheme == Scheme::Tags && tag_symbols(pair).iter().any(|t| t == token);
                if !is_tag {
                    return Err(Error::Vocabulary(format!(
                        "tag delimiter outside a complete {pair} tag token in {token:?}"
                    )));
                }
                continue;
            }
            chars.extend(token.chars());
        }
    }
    if scheme == Scheme::Casing {
        let letters: Vec<char> = chars.iter().copied().filter(char::is_ascii_alphabetic).collect();
        for c in letters {
            chars.insert(c.to_ascii_uppercase());
            chars.insert(c.to_ascii_lowercase());
        }
    }
    let mut symbols = vec![BLANK.to_string(), SPACE.to_string()];
    symbols.extend(chars.into_iter().filter(|c| *c != ' ').map(String::from));
    if scheme == Scheme::Tags {
        symbols.extend(tag_symbols(pair));
    }
    Vocabulary::from_symbols(symbols, scheme, Some(pair))
}
