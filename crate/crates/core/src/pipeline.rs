//! End-to-end experiment: train an LM on the training split, decode every
//! test utterance, score, and write artifacts with checksums.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{render, Scheme, Vocabulary};
use crate::corpus::{load_manifest, Utterance};
use crate::cslg;
use crate::ctc::{beam_decode, greedy_decode, DecodeParams, LogitMatrix};
use crate::error::{Error, Result};
use crate::lm::{tokenize, train, write_arpa_string, NGramModel, Smoothing, MAX_ORDER};
use crate::metrics::{evaluate, Evaluation};
use crate::synth::{synth_corpus, SynthConfig};

/// Overrides the configured worker count.
pub const THREADS_ENV: &str = "CSWITCH_THREADS";

pub const HYPOTHESES_FILE: &str = "hypotheses.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const RECORDS_FILE: &str = "report.jsonl";
pub const ARPA_FILE: &str = "lm.arpa";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Source {
    Files {
        manifest: PathBuf,
        /// Transcripts for LM training; needed when the LM order is positive.
        train_manifest: Option<PathBuf>,
        logits_dir: PathBuf,
        vocab: PathBuf,
    },
    /// Generate the corpus in memory. Its seed and scheme come from the
    /// experiment config.
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: Source,
    pub scheme: Scheme,
    /// 0 decodes greedily without an LM.
    pub lm_order: usize,
    pub smoothing: Smoothing,
    pub beam_width: usize,
    pub lm_weight: f64,
    pub word_bonus: f64,
    pub seed: u64,
    /// Worker threads; `None` uses every core. See [`THREADS_ENV`].
    pub threads: Option<usize>,
    /// Score hypotheses as written instead of lowercased and detagged.
    pub score_raw: bool,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(source: Source) -> Self {
        let d = DecodeParams::default();
        ExperimentConfig {
            source,
            scheme: Scheme::Plain,
            lm_order: 3,
            smoothing: Smoothing::default(),
            beam_width: d.beam_width,
            lm_weight: d.lm_weight,
            word_bonus: d.word_bonus,
            seed: 42,
            threads: None,
            score_raw: false,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lm_order > MAX_ORDER {
            return Err(Error::InvalidParameter(format!(
                "LM order must be 0 (none) to {MAX_ORDER}, got {}",
                self.lm_order
            )));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter("thread count must be positive".into()));
        }
        self.smoothing.validate()?;
        self.decode_params(None).validate()
    }

    fn decode_params<'a>(&self, lm: Option<&'a NGramModel>) -> DecodeParams<'a> {
        DecodeParams {
            beam_width: self.beam_width,
            lm_weight: self.lm_weight,
            word_bonus: self.word_bonus,
            lm,
        }
    }
}

/// Decoding inputs held in memory.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub test: Vec<Utterance>,
    pub train: Vec<Utterance>,
    /// Normalized, one per test utterance, same order.
    pub logits: Vec<LogitMatrix>,
    pub vocab: Vocabulary,
}

fn missing_ids(test: &[Utterance], have: impl Fn(&str) -> bool) -> Result<()> {
    let missing: Vec<&str> = test.iter().map(|u| u.id.as_str()).filter(|id| !have(id)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Pipeline(format!("no logit file for: {}", missing.join(", "))))
    }
}

impl Inputs {
    pub fn load(config: &ExperimentConfig) -> Result<Inputs> {
        match &config.source {
            Source::Synthetic(synth) => {
                let synth = SynthConfig {
                    seed: config.seed,
                    scheme: config.scheme,
                    ..synth.clone()
                };
                let c = synth_corpus(&synth)?;
                Ok(Inputs {
                    test: c.test,
                    train: c.train,
                    logits: c.logits,
                    vocab: c.vocab,
                })
            }
            Source::Files {
                manifest,
                train_manifest,
                logits_dir,
                vocab,
            } => {
                let vocab = Vocabulary::load(vocab)?;
                if vocab.scheme() != config.scheme {
                    return Err(Error::Pipeline(format!(
                        "vocabulary is for scheme {} but the experiment uses {}",
                        vocab.scheme(),
                        config.scheme
                    )));
                }
                let test = load_manifest(manifest)?;
                let train = match train_manifest {
                    Some(p) => load_manifest(p)?,
                    None => Vec::new(),
                };
                missing_ids(&test, |id| cslg::cslg_path(logits_dir, id).is_file())?;
                let logits = test
                    .iter()
                    .map(|u| {
                        let f = cslg::read(cslg::cslg_path(logits_dir, &u.id))?;
                        if f.matrix.utterance_id != u.id {
                            return Err(Error::Pipeline(format!(
                                "logit file for `{}` carries id `{}`",
                                u.id, f.matrix.utterance_id
                            )));
                        }
                        f.check_vocab(&vocab)?;
                        if f.matrix.is_normalized() {
                            Ok(f.matrix)
                        } else {
                            f.matrix.normalize()
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Inputs {
                    test,
                    train,
                    logits,
                    vocab,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// (id, text) in manifest order.
    pub hypotheses: Vec<(String, String)>,
    pub evaluation: Evaluation,
    pub lm: Option<NGramModel>,
}

impl RunOutput {
    pub fn hypotheses_tsv(&self) -> String {
        self.hypotheses.iter().map(|(id, text)| format!("{id}\t{text}\n")).collect()
    }
}

/// Worker count: the environment override, else the config, else all cores.
pub fn resolve_threads(configured: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::InvalidParameter(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        };
    }
    Ok(configured.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

/// Trains an LM on scheme-rendered training transcripts.
pub fn train_lm(train_utts: &[Utterance], scheme: Scheme, order: usize, smoothing: Smoothing) -> Result<NGramModel> {
    if train_utts.is_empty() {
        return Err(Error::Pipeline("an LM order above 0 needs training transcripts".into()));
    }
    let sentences = train_utts
        .iter()
        .map(|u| render(u, scheme).map(|t| tokenize(&t)))
        .collect::<Result<Vec<_>>>()?;
    train(&sentences, order, smoothing)
}

/// Decodes and scores in memory.
pub fn run(inputs: &Inputs, config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    if inputs.logits.len() != inputs.test.len() {
        return Err(Error::Pipeline(format!(
            "{} logit matrices for {} utterances",
            inputs.logits.len(),
            inputs.test.len()
        )));
    }
    for (u, m) in inputs.test.iter().zip(&inputs.logits) {
        if m.symbols() != inputs.vocab.len() {
            return Err(Error::Pipeline(format!(
                "logits for `{}` have V={} but the vocabulary has {}",
                u.id,
                m.symbols(),
                inputs.vocab.len()
            )));
        }
    }
    let lm = match config.lm_order {
        0 => None,
        n => Some(train_lm(&inputs.train, config.scheme, n, config.smoothing)?),
    };
    let params = config.decode_params(lm.as_ref());
    let vocab = &inputs.vocab;
    let decode = |m: &LogitMatrix| -> Result<String> {
        if config.lm_order == 0 {
            return greedy_decode(m, vocab);
        }
        Ok(beam_decode(m, vocab, &params)?
            .into_iter()
            .next()
            .map(|h| h.text)
            .unwrap_or_default())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(config.threads)?)
        .build()
        .map_err(|e| Error::Pipeline(e.to_string()))?;
    let texts: Vec<String> = pool.install(|| inputs.logits.par_iter().map(decode).collect::<Result<_>>())?;
    let hypotheses: Vec<(String, String)> = inputs.test.iter().map(|u| u.id.clone()).zip(texts).collect();
    let by_id: HashMap<String, String> = hypotheses.iter().cloned().collect();
    let evaluation = evaluate(&inputs.test, &by_id, config.score_raw)?;
    Ok(RunOutput {
        hypotheses,
        evaluation,
        lm,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    utterances: usize,
    wer: f64,
    /// File name to SHA-256 of its bytes.
    checksums: BTreeMap<&'static str, String>,
}

/// Writes every artifact of `out` into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(&'static str, String)> = vec![
        (HYPOTHESES_FILE, out.hypotheses_tsv()),
        (REPORT_FILE, out.evaluation.to_text(10)),
        (RECORDS_FILE, out.evaluation.to_records()),
    ];
    if let Some(lm) = &out.lm {
        files.push((ARPA_FILE, write_arpa_string(lm)));
    }
    let mut checksums = BTreeMap::new();
    for (name, body) in &files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        checksums.insert(*name, sha256_hex(body.as_bytes()));
    }
    let manifest = RunManifest {
        config,
        seed: config.seed,
        utterances: out.hypotheses.len(),
        wer: out.evaluation.wer(),
        checksums,
    };
    let path = dir.join(RUN_FILE);
    let body = serde_json::to_string_pretty(&manifest).expect("run manifest serializes") + "\n";
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

/// Loads inputs, runs, and writes artifacts when an output directory is set.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let inputs = Inputs::load(config)?;
    let out = run(&inputs, config)?;
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, config, &out)?;
    }
    Ok(out)
}

/// Parses a `hypotheses.tsv` body into (id, text) pairs.
pub fn parse_hypotheses(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(id, t)| (id.to_string(), t.to_string()))
                .ok_or_else(|| Error::Pipeline(format!("hypothesis line {} has no tab", i + 1)))
        })
        .collect()
}
