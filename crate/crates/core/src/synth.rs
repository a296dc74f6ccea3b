//! Seeded synthetic code-switched corpus with a simulated acoustic channel.
//!
//! Two artificial lexicons stand in for English and a Bantu language. Word
//! sequences come from a random n-gram grammar over both lexicons, bigram by
//! default. Every rendered symbol becomes three frames (symbol, symbol,
//! blank) whose log-scores are perturbed by Gaussian noise scaled by the
//! channel temperature.
//!
//! All randomness comes from ChaCha8 seeded with one `u64`. Each concern
//! (lexicons, grammar, training text, test text, channel) draws from its own
//! stream of that generator, so e.g. changing the noise leaves the
//! transcripts untouched.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{build_vocab, render_casing, render_tags, LabeledWord, LabeledWordSeq, Scheme, Vocabulary};
use crate::corpus::{write_manifest, LangPair, Language, LanguageSpan, Utterance};
use crate::cslg::{self, CslgFile};
use crate::ctc::LogitMatrix;
use crate::error::{Error, Result};

/// Score of the emitted symbol before noise; the rest sit at 0.
pub const SIGNAL: f64 = 5.0;

const STREAM_LEXICON: u64 = 1;
const STREAM_TRAIN: u64 = 3;
const STREAM_TEST: u64 = 4;
const STREAM_CHANNEL: u64 = 5;

const ENG_ONSETS: &[&str] = &["b", "br", "d", "dr", "f", "fl", "g", "gr", "k", "l", "m", "p", "pl", "r", "s", "st", "t", "tr", "w"];
const ENG_VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ee", "oo", "ea"];
const ENG_CODAS: &[&str] = &["d", "ft", "g", "k", "l", "m", "nd", "nt", "p", "rk", "s", "st", "t", "x"];
const BANTU_ONSETS: &[&str] = &["b", "hl", "k", "l", "m", "mb", "n", "ng", "nk", "p", "s", "th", "tsh", "w", "y", "z"];
const BANTU_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Test utterances, each with a logit matrix.
    pub utterances: usize,
    /// Text-only utterances for LM training.
    pub train_utterances: usize,
    pub eng_words: usize,
    pub bantu_words: usize,
    /// Probability of changing language at each word boundary.
    pub switch_prob: f64,
    /// Standard deviation of the Gaussian noise on every frame score.
    pub noise: f64,
    /// Likely successors per context and language.
    pub successors: usize,
    /// Words of context, plus one, that condition the next word: 2 for a
    /// bigram grammar, 3 for a trigram one.
    pub grammar_order: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub lang_pair: LangPair,
    pub scheme: Scheme,
    pub frame_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            utterances: 500,
            train_utterances: 2000,
            eng_words: 60,
            bantu_words: 60,
            switch_prob: 0.2,
            noise: 1.0,
            successors: 4,
            grammar_order: 2,
            min_words: 4,
            max_words: 10,
            lang_pair: LangPair::ZulEng,
            scheme: Scheme::Plain,
            frame_rate: 50.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Synth(m.to_string()));
        if self.utterances == 0 || self.eng_words == 0 || self.bantu_words == 0 {
            return bad("utterance count and lexicon sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return bad("switch probability must be in [0, 1]");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and non-negative");
        }
        if self.successors == 0 {
            return bad("need at least one successor per word");
        }
        if !(1..=3).contains(&self.grammar_order) {
            return bad("grammar order must be 1, 2 or 3");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return bad("frame rate must be positive");
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SynthConfig,
    pub eng_lexicon: Vec<String>,
    pub bantu_lexicon: Vec<String>,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
    /// One normalized matrix per test utterance, same order.
    pub logits: Vec<LogitMatrix>,
    pub vocab: Vocabulary,
}

fn eng_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(1..=2);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ENG_ONSETS.choose(rng).unwrap());
        w.push_str(ENG_VOWELS.choose(rng).unwrap());
    }
    w.push_str(ENG_CODAS.choose(rng).unwrap());
    w
}

fn bantu_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(BANTU_ONSETS.choose(rng).unwrap());
        w.push_str(BANTU_VOWELS.choose(rng).unwrap());
    }
    w
}

/// Upper bounds on the distinct words each generator can produce.
const ENG_CAPACITY: usize = {
    let syllable = ENG_ONSETS.len() * ENG_VOWELS.len();
    (syllable + syllable * syllable) * ENG_CODAS.len()
};
const BANTU_CAPACITY: usize = {
    let syllable = BANTU_ONSETS.len() * BANTU_VOWELS.len();
    syllable * syllable * (1 + syllable)
};

/// Consecutive duplicate draws tolerated before giving up.
const MAX_MISSES: usize = 10_000;

fn lexicon(
    rng: &mut ChaCha8Rng,
    size: usize,
    capacity: usize,
    make: fn(&mut ChaCha8Rng) -> String,
) -> Result<Vec<String>> {
    let exhausted = || Error::Synth(format!("cannot draw {size} distinct words; the lexicon would repeat itself"));
    if size > capacity {
        return Err(exhausted());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    let mut misses = 0;
    while out.len() < size {
        let w = make(rng);
        if seen.insert(w.clone()) {
            out.push(w);
            misses = 0;
        } else {
            misses += 1;
            if misses > MAX_MISSES {
                return Err(exhausted());
            }
        }
    }
    Ok(out)
}

/// Draws the two lexicons. Fails if they would share a word.
pub fn lexicons(config: &SynthConfig) -> Result<(Vec<String>, Vec<String>)> {
    let mut rng = config.rng(STREAM_LEXICON);
    let eng = lexicon(&mut rng, config.eng_words, ENG_CAPACITY, eng_word)?;
    let bantu = lexicon(&mut rng, config.bantu_words, BANTU_CAPACITY, bantu_word)?;
    check_disjoint(&eng, &bantu)?;
    Ok((eng, bantu))
}

pub fn check_disjoint(a: &[String], b: &[String]) -> Result<()> {
    let a: BTreeSet<&String> = a.iter().collect();
    let shared: Vec<&str> = b.iter().filter(|w| a.contains(w)).map(String::as_str).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Synth(format!("lexicons collide on: {}", shared.join(", "))))
    }
}

type Choice = (Vec<usize>, WeightedIndex<f64>);

/// Word index space: English words first, then Bantu.
///
/// Successor lists are keyed by the last `order - 1` words (just the last
/// word for a bigram grammar) and drawn on first use from a stream derived
/// from the context, so the grammar does not depend on sampling order.
struct Grammar {
    words: Vec<(String, Language)>,
    ranges: [std::ops::Range<usize>; 2],
    seed: u64,
    successors: usize,
    order: usize,
    switch_prob: f64,
    tables: RefCell<HashMap<Vec<usize>, Rc<[Choice; 2]>>>,
}

/// Context streams start above the fixed ones.
const STREAM_CONTEXT_BASE: u64 = 16;

impl Grammar {
    fn new(config: &SynthConfig, eng: &[String], bantu: &[String]) -> Self {
        let bantu_lang = config.lang_pair.bantu();
        let mut words: Vec<(String, Language)> = eng.iter().map(|w| (w.clone(), Language::Eng)).collect();
        words.extend(bantu.iter().map(|w| (w.clone(), bantu_lang)));
        let ranges = [0..eng.len(), eng.len()..words.len()];
        Grammar {
            words,
            ranges,
            seed: config.seed,
            successors: config.successors,
            order: config.grammar_order,
            switch_prob: config.switch_prob,
            tables: RefCell::new(HashMap::new()),
        }
    }

    /// Successors of `context` (at most `order - 1` words), per language.
    fn table(&self, context: &[usize]) -> Rc<[Choice; 2]> {
        if let Some(t) = self.tables.borrow().get(context) {
            return Rc::clone(t);
        }
        let n = self.words.len() as u64;
        let index = context.iter().fold(0u64, |acc, &w| acc * (n + 1) + w as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_CONTEXT_BASE + index);
        // Successor weights fall off geometrically: 1, 1/2, 1/4, ...
        let mut pick = |range: &std::ops::Range<usize>| -> Choice {
            let k = self.successors.min(range.len());
            let pool: Vec<usize> = range.clone().collect();
            let chosen: Vec<usize> = pool.choose_multiple(&mut rng, k).copied().collect();
            let weights: Vec<f64> = (0..k).map(|i| 0.5f64.powi(i as i32)).collect();
            (chosen, WeightedIndex::new(weights).expect("positive weights"))
        };
        let t = Rc::new([pick(&self.ranges[0]), pick(&self.ranges[1])]);
        self.tables.borrow_mut().insert(context.to_vec(), Rc::clone(&t));
        t
    }

    fn sentence(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
        let mut lang = usize::from(rng.random_bool(0.5));
        let mut out: Vec<usize> = Vec::with_capacity(len);
        while out.len() < len {
            if !out.is_empty() && self.switch_prob > 0.0 && rng.random_bool(self.switch_prob) {
                lang = 1 - lang;
            }
            let context = &out[out.len().saturating_sub(self.order - 1)..];
            let table = self.table(context);
            let (ids, dist) = &table[lang];
            out.push(ids[dist.sample(rng)]);
        }
        out
    }
}

/// Frames per rendered symbol: symbol, symbol, blank.
const FRAMES_PER_SYMBOL: usize = 3;
/// Blank frames before and after the speech.
const EDGE_FRAMES: usize = 2;

fn render_run(words: &[LabeledWord], scheme: Scheme) -> Result<String> {
    let seq = LabeledWordSeq(words.to_vec());
    match scheme {
        Scheme::Plain => Ok(seq.words().join(" ")),
        Scheme::Casing => render_casing(&seq),
        Scheme::Tags => Ok(render_tags(&seq)),
    }
}

/// Rendered runs of one sentence, with the symbol offset each starts at.
fn layout(seq: &LabeledWordSeq, scheme: Scheme) -> Result<Vec<(Language, String, String)>> {
    let mut out = Vec::new();
    let mut i = 0;
    for (lang, words) in seq.runs() {
        let run = &seq.0[i..i + words.len()];
        i += words.len();
        out.push((lang, words.join(" "), render_run(run, scheme)?));
    }
    Ok(out)
}

fn utterance(
    id: String,
    seq: &LabeledWordSeq,
    config: &SynthConfig,
    vocab: &Vocabulary,
) -> Result<(Utterance, String)> {
    let runs = layout(seq, config.scheme)?;
    let rate = config.frame_rate;
    let mut spans = Vec::with_capacity(runs.len());
    let mut frame = EDGE_FRAMES;
    let mut rendered = Vec::with_capacity(runs.len());
    for (k, (lang, plain, text)) in runs.into_iter().enumerate() {
        if k > 0 {
            frame += FRAMES_PER_SYMBOL; // the space between runs
        }
        let symbols = vocab.encode(&text)?.len();
        let start = frame;
        frame += symbols * FRAMES_PER_SYMBOL;
        spans.push(LanguageSpan::new(lang, start as f64 / rate, frame as f64 / rate, plain));
        rendered.push(text);
    }
    let total = frame + EDGE_FRAMES;
    let utt = Utterance::new(id, None, config.lang_pair, spans, total as f64 / rate)?;
    Ok((utt, rendered.join(" ")))
}

/// Noisy normalized log-scores for a rendered transcript.
fn channel(
    id: &str,
    text: &str,
    vocab: &Vocabulary,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LogitMatrix> {
    let ids = vocab.encode(text)?;
    let v = vocab.len();
    let mut path = vec![vocab.blank(); EDGE_FRAMES];
    for &s in &ids {
        path.extend([s, s, vocab.blank()]);
    }
    path.extend(std::iter::repeat_n(vocab.blank(), EDGE_FRAMES));
    let mut values = Vec::with_capacity(path.len() * v);
    for &s in &path {
        for c in 0..v {
            let clean = if c == s { SIGNAL } else { 0.0 };
            let z: f64 = StandardNormal.sample(rng);
            values.push(clean + config.noise * z);
        }
    }
    LogitMatrix::new(id, config.frame_rate, path.len(), v, values, false)?.normalize()
}

pub fn synth_corpus(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let (eng, bantu) = lexicons(config)?;
    let grammar = Grammar::new(config, &eng, &bantu);

    let sample = |stream: u64, n: usize, prefix: &str| -> Result<Vec<(String, LabeledWordSeq)>> {
        let mut rng = config.rng(stream);
        (0..n)
            .map(|i| {
                let len = rng.random_range(config.min_words..=config.max_words);
                let seq = LabeledWordSeq(
                    grammar
                        .sentence(&mut rng, len)
                        .into_iter()
                        .map(|w| LabeledWord::new(grammar.words[w].0.clone(), grammar.words[w].1))
                        .collect(),
                );
                Ok((format!("{prefix}{i:05}"), seq))
            })
            .collect()
    };
    let train_text = sample(STREAM_TRAIN, config.train_utterances, "train-")?;
    let test_text = sample(STREAM_TEST, config.utterances, "synth-")?;

    // The vocabulary covers both lexicons so no split can fall outside it.
    let lexicon_seq = LabeledWordSeq(
        grammar
            .words
            .iter()
            .map(|(w, l)| LabeledWord::new(w.clone(), *l))
            .collect(),
    );
    let all_rendered: Vec<String> = layout(&lexicon_seq, config.scheme)?
        .into_iter()
        .map(|r| r.2)
        .collect();
    let vocab = build_vocab(&all_rendered, config.scheme, config.lang_pair)?;

    let train = train_text
        .iter()
        .map(|(id, seq)| utterance(id.clone(), seq, config, &vocab).map(|u| u.0))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = config.rng(STREAM_CHANNEL);
    let mut test = Vec::with_capacity(test_text.len());
    let mut logits = Vec::with_capacity(test_text.len());
    for (id, seq) in &test_text {
        let (utt, rendered) = utterance(id.clone(), seq, config, &vocab)?;
        logits.push(channel(id, &rendered, &vocab, config, &mut rng)?);
        test.push(utt);
    }
    Ok(SyntheticCorpus {
        config: config.clone(),
        eng_lexicon: eng,
        bantu_lexicon: bantu,
        train,
        test,
        logits,
        vocab,
    })
}

/// Paths of a corpus written by [`SyntheticCorpus::write`].
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub test_manifest: PathBuf,
    pub train_manifest: PathBuf,
    pub logits_dir: PathBuf,
    pub vocab: PathBuf,
    pub config: PathBuf,
}

impl CorpusLayout {
    pub fn new(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        CorpusLayout {
            test_manifest: d.join("test.jsonl"),
            train_manifest: d.join("train.jsonl"),
            logits_dir: d.join("logits"),
            vocab: d.join("vocab.json"),
            config: d.join("synth.json"),
        }
    }
}

impl SyntheticCorpus {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<CorpusLayout> {
        let layout = CorpusLayout::new(dir.as_ref());
        fs::create_dir_all(&layout.logits_dir).map_err(|e| Error::io(&layout.logits_dir, e))?;
        write_manifest(&layout.test_manifest, &self.test)?;
        write_manifest(&layout.train_manifest, &self.train)?;
        self.vocab.save(&layout.vocab)?;
        let config = serde_json::to_string_pretty(&self.config).expect("config serializes") + "\n";
        fs::write(&layout.config, config).map_err(|e| Error::io(&layout.config, e))?;
        for m in &self.logits {
            let file = CslgFile::new(m.clone(), self.vocab.symbols().to_vec())?;
            cslg::write(cslg::cslg_path(&layout.logits_dir, &m.utterance_id), &file)?;
        }
        Ok(layout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::render;
    use crate::ctc::greedy_decode;

    fn small() -> SynthConfig {
        SynthConfig {
            utterances: 20,
            train_utterances: 30,
            eng_words: 10,
            bantu_words: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_channel_is_exact() {
        for scheme in [Scheme::Plain, Scheme::Casing, Scheme::Tags] {
            let c = synth_corpus(&SynthConfig { noise: 0.0, scheme, ..small() }).unwrap();
            for (u, m) in c.test.iter().zip(&c.logits) {
                assert_eq!(greedy_decode(m, &c.vocab).unwrap(), render(u, scheme).unwrap());
            }
        }
    }

    #[test]
    fn lexicons_are_disjoint() {
        let c = synth_corpus(&small()).unwrap();
        assert!(check_disjoint(&c.eng_lexicon, &c.bantu_lexicon).is_ok());
        assert!(check_disjoint(&["a".into()], &["b".into(), "a".into()]).is_err());
    }

    #[test]
    fn no_switching_gives_one_language() {
        let c = synth_corpus(&SynthConfig { switch_prob: 0.0, ..small() }).unwrap();
        for u in c.test.iter().chain(&c.train) {
            assert_eq!(u.spans.len(), 1);
        }
        let c = synth_corpus(&SynthConfig { switch_prob: 1.0, ..small() }).unwrap();
        assert!(c.test.iter().all(|u| u.spans.len() == u.words().count()));
    }

    #[test]
    fn timestamps_match_frames() {
        let c = synth_corpus(&small()).unwrap();
        for (u, m) in c.test.iter().zip(&c.logits) {
            assert!((u.duration_s * c.config.frame_rate - m.frames() as f64).abs() < 1e-9);
            let first = &u.spans[0];
            assert!((first.start_s - EDGE_FRAMES as f64 / 50.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_determinism() {
        let a = synth_corpus(&small()).unwrap();
        let b = synth_corpus(&small()).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.logits, b.logits);
        let c = synth_corpus(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(a.test, c.test);
        // Noise does not move the transcripts.
        let d = synth_corpus(&SynthConfig { noise: 2.0, ..small() }).unwrap();
        assert_eq!(a.test, d.test);
    }

    #[test]
    fn oversized_lexicon_is_rejected() {
        let cfg = SynthConfig { eng_words: 1_000_000, ..small() };
        assert!(matches!(synth_corpus(&cfg), Err(Error::Synth(_))));
        assert!(synth_corpus(&SynthConfig { switch_prob: 1.5, ..small() }).is_err());
    }

    #[test]
    fn write_layout() {
        let dir = tempfile::tempdir().unwrap();
        let c = synth_corpus(&small()).unwrap();
        let l = c.write(dir.path()).unwrap();
        assert_eq!(crate::corpus::load_manifest(&l.test_manifest).unwrap(), c.test);
        let f = cslg::validate(cslg::cslg_path(&l.logits_dir, &c.test[0].id), Some(&c.vocab)).unwrap();
        assert_eq!(f.matrix.frames(), c.logits[0].frames());
    }
}
