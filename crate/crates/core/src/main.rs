use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use cswitch::augment::{render, Scheme, Vocabulary};
use cswitch::corpus::{corpus_stats, load_manifest, LangPair};
use cswitch::ctc::{beam_decode, greedy_decode, DecodeParams, LogitMatrix};
use cswitch::langid::{frames_from_spans, lid_counts, lid_cross_entropy_sum, FrameClass, FrameLabels};
use cswitch::lm::{read_arpa, tokenize, train, write_arpa, NGramModel, Smoothing};
use cswitch::metrics::evaluate;
use cswitch::pipeline::{parse_hypotheses, resolve_threads, run_pipeline, train_lm, ExperimentConfig, Source};
use cswitch::synth::{synth_corpus, SynthConfig};
use cswitch::{cslg, Error, Result};

#[derive(Parser)]
#[command(name = "cswitch", version, about = "Code-switched speech recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Utterance counts and hours per language pair.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Render transcripts under a labelling scheme as `id<TAB>text`.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "plain")]
        scheme: Scheme,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train an n-gram model and write it as ARPA.
    LmTrain {
        #[command(flatten)]
        text: TextInput,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value = "kn")]
        smoothing: Smoothing,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the log10 probability of each sentence, `</s>` included.
    LmScore {
        #[arg(long)]
        lm: PathBuf,
        #[command(flatten)]
        text: TextInput,
    },
    /// Print the perplexity of a set of sentences.
    LmPpl {
        #[arg(long)]
        lm: PathBuf,
        #[command(flatten)]
        text: TextInput,
    },
    /// Decode CSLG logit files, greedily or with beam search.
    Decode(DecodeArgs),
    /// Frame-level language ID accuracy and cross-entropy.
    LidEval {
        /// Directory of CSLG posterior files whose symbols are class names.
        #[arg(long)]
        posteriors: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Count silence frames too.
        #[arg(long)]
        include_silence: bool,
    },
    /// Score hypotheses against a reference manifest.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        /// `id<TAB>text` lines.
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Score text as written, without lowercasing or tag removal.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 10)]
        worst: usize,
    },
    /// Write a synthetic code-switched corpus.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Train, decode and score in one run.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Records,
}

#[derive(Args)]
#[group(skip)]
#[command(group(ArgGroup::new("input").required(true).args(["text", "manifest"])))]
struct TextInput {
    /// Plain text, one sentence per line.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Manifest whose transcripts are rendered with `--scheme`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "plain", requires = "manifest")]
    scheme: Scheme,
}

impl TextInput {
    fn sentences(&self) -> Result<Vec<Vec<String>>> {
        match (&self.text, &self.manifest) {
            (Some(path), _) => Ok(read_text(path)?.lines().map(tokenize).collect()),
            (None, Some(path)) => load_manifest(path)?
                .iter()
                .map(|u| render(u, self.scheme).map(|t| tokenize(&t)))
                .collect(),
            (None, None) => unreachable!("clap requires one input"),
        }
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Decode these ids in order; otherwise every file in the directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// ARPA model for shallow fusion; implies beam search.
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Beam width; without it and without `--lm` decoding is greedy.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    train_utterances: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    switch_prob: Option<f64>,
    #[arg(long)]
    grammar_order: Option<usize>,
    #[arg(long)]
    lang_pair: Option<LangPair>,
    #[arg(long, default_value = "plain")]
    scheme: Scheme,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            seed: self.seed,
            utterances: self.utterances.unwrap_or(d.utterances),
            train_utterances: self.train_utterances.unwrap_or(d.train_utterances),
            noise: self.noise.unwrap_or(d.noise),
            switch_prob: self.switch_prob.unwrap_or(d.switch_prob),
            grammar_order: self.grammar_order.unwrap_or(d.grammar_order),
            lang_pair: self.lang_pair.unwrap_or(d.lang_pair),
            scheme: self.scheme,
            ..d
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON experiment config; other flags are then ignored except
    /// `--output` and `--threads`, which override it.
    #[arg(long, conflicts_with_all = ["manifest", "synthetic"])]
    config: Option<PathBuf>,
    /// Test manifest; needs `--logits` and `--vocab`.
    #[arg(long, requires_all = ["logits", "vocab"])]
    manifest: Option<PathBuf>,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    logits: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Generate the corpus instead of reading files.
    #[arg(long, conflicts_with = "manifest")]
    synthetic: bool,
    #[command(flatten)]
    synth: SynthArgs,
    /// 0 decodes greedily.
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long, default_value = "kn")]
    smoothing: Smoothing,
    #[arg(long, default_value_t = 100)]
    beam: usize,
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl PipelineArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = if let Some(path) = &self.config {
            serde_json::from_str(&read_text(path)?)
                .map_err(|e| Error::Pipeline(format!("{}: {e}", path.display())))?
        } else {
            let source = match (&self.manifest, self.synthetic) {
                (Some(manifest), _) => Source::Files {
                    manifest: manifest.clone(),
                    train_manifest: self.train_manifest.clone(),
                    logits_dir: self.logits.clone().expect("clap requires --logits"),
                    vocab: self.vocab.clone().expect("clap requires --vocab"),
                },
                (None, true) => Source::Synthetic(self.synth.config()),
                (None, false) => {
                    return Err(Error::InvalidParameter(
                        "pipeline needs --config, --manifest or --synthetic".into(),
                    ))
                }
            };
            ExperimentConfig {
                scheme: self.synth.scheme,
                lm_order: self.order,
                smoothing: self.smoothing,
                beam_width: self.beam,
                lm_weight: self.alpha,
                word_bonus: self.beta,
                seed: self.synth.seed,
                score_raw: self.raw,
                ..ExperimentConfig::new(source)
            }
        };
        if self.threads.is_some() {
            config.threads = self.threads;
        }
        if self.output.is_some() {
            config.output_dir = self.output.clone();
        }
        Ok(config)
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(output: Option<&Path>, body: &str) -> Result<()> {
    match output {
        Some(path) => fs::write(path, body).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            // A closed stdout pipe is not worth an error line.
            let _ = io::stdout().lock().write_all(body.as_bytes());
            Ok(())
        }
    }
}

fn warn_all(lm: &NGramModel) {
    for w in lm.warnings() {
        eprintln!("warning: {w}");
    }
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(threads)?)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Ids to decode: from the manifest, else every `.cslg` file in `dir`.
fn logit_ids(dir: &Path, manifest: Option<&Path>) -> Result<Vec<String>> {
    if let Some(m) = manifest {
        return Ok(load_manifest(m)?.into_iter().map(|u| u.id).collect());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if path.extension().and_then(|e| e.to_str()) == Some(cslg::EXTENSION) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Cslg(format!("no .{} files in {}", cslg::EXTENSION, dir.display())));
    }
    Ok(ids)
}

fn load_logits(dir: &Path, id: &str, vocab: Option<&Vocabulary>) -> Result<LogitMatrix> {
    let file = cslg::validate(cslg::cslg_path(dir, id), vocab)?;
    if file.matrix.is_normalized() {
        Ok(file.matrix)
    } else {
        file.matrix.normalize()
    }
}

fn decode(args: &DecodeArgs) -> Result<String> {
    let vocab = Vocabulary::load(&args.vocab)?;
    let lm = args.lm.as_deref().map(read_arpa).transpose()?;
    let ids = logit_ids(&args.logits, args.manifest.as_deref())?;
    let params = DecodeParams {
        beam_width: args.beam.unwrap_or(DecodeParams::default().beam_width),
        lm_weight: args.alpha,
        word_bonus: args.beta,
        lm: lm.as_ref(),
    };
    let use_beam = lm.is_some() || args.beam.is_some();
    if use_beam {
        params.validate()?;
    }
    let lines = pool(args.threads)?.install(|| {
        ids.par_iter()
            .map(|id| {
                let m = load_logits(&args.logits, id, Some(&vocab))?;
                let text = if use_beam {
                    beam_decode(&m, &vocab, &params)?
                        .into_iter()
                        .next()
                        .map(|h| h.text)
                        .unwrap_or_default()
                } else {
                    greedy_decode(&m, &vocab)?
                };
                Ok(format!("{id}\t{text}\n"))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(lines.concat())
}

fn lid_eval(posteriors: &Path, manifest: &Path, include_silence: bool) -> Result<String> {
    let utts = load_manifest(manifest)?;
    let (mut correct, mut counted) = (0usize, 0usize);
    let (mut ce_sum, mut ce_frames) = (0.0, 0usize);
    for utt in &utts {
        let file = cslg::validate(cslg::cslg_path(posteriors, &utt.id), None)?;
        let classes = file
            .symbols
            .iter()
            .map(|s| s.parse::<FrameClass>().map_err(|e| Error::LangId(format!("`{}`: {e}", utt.id))))
            .collect::<Result<Vec<_>>>()?;
        let m = if file.matrix.is_normalized() {
            file.matrix
        } else {
            file.matrix.normalize()?
        };
        let probs: Vec<Vec<f64>> = m.rows().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        let pred = FrameLabels {
            labels: m.argmax_path().into_iter().map(|c| classes[c]).collect(),
            frame_rate: m.frame_rate,
        };
        let gold = frames_from_spans(utt, m.frame_rate, m.frames())?;
        let (c, n) = lid_counts(&pred, &gold, !include_silence);
        correct += c;
        counted += n;
        let (s, n) = lid_cross_entropy_sum(&probs, &classes, &gold)?;
        ce_sum += s;
        ce_frames += n;
    }
    if counted == 0 {
        return Err(Error::LangId("no frames to score".into()));
    }
    let mut out = format!("LID accuracy {:.2}% ({correct}/{counted} frames)\n", 100.0 * correct as f64 / counted as f64);
    if ce_frames > 0 {
        out += &format!("LID cross-entropy {:.4} nats/frame\n", ce_sum / ce_frames as f64);
    }
    Ok(out)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Stats { manifest } => emit(None, &corpus_stats(&load_manifest(manifest)?).to_string()),
        Command::Augment { manifest, scheme, output } => {
            let mut body = String::new();
            for utt in load_manifest(manifest)? {
                body += &format!("{}\t{}\n", utt.id, render(&utt, scheme)?);
            }
            emit(output.as_deref(), &body)
        }
        Command::LmTrain { text, order, smoothing, output } => {
            let lm = match (&text.manifest, &text.text) {
                (Some(m), None) => train_lm(&load_manifest(m)?, text.scheme, order, smoothing)?,
                _ => train(&text.sentences()?, order, smoothing)?,
            };
            warn_all(&lm);
            write_arpa(&lm, &output)
        }
        Command::LmScore { lm, text } => {
            let lm = read_arpa(lm)?;
            let body: String = text
                .sentences()?
                .iter()
                .map(|s| {
                    let words: Vec<&str> = s.iter().map(String::as_str).collect();
                    format!("{:.6}\n", lm.score_sentence(&words))
                })
                .collect();
            emit(None, &body)
        }
        Command::LmPpl { lm, text } => {
            let ppl = read_arpa(lm)?.perplexity(&text.sentences()?)?;
            emit(None, &format!("{ppl:.4}\n"))
        }
        Command::Decode(args) => {
            let body = decode(&args)?;
            emit(args.output.as_deref(), &body)
        }
        Command::LidEval {
            posteriors,
            manifest,
            include_silence,
        } => emit(None, &lid_eval(&posteriors, &manifest, include_silence)?),
        Command::Evaluate {
            reference,
            hyp,
            format,
            raw,
            worst,
        } => {
            let refs = load_manifest(reference)?;
            let hyps: HashMap<String, String> = parse_hypotheses(&read_text(&hyp)?)?.into_iter().collect();
            let eval = evaluate(&refs, &hyps, raw)?;
            emit(
                None,
                &match format {
                    Format::Text => eval.to_text(worst),
                    Format::Records => eval.to_records(),
                },
            )
        }
        Command::Synth { output, synth } => {
            let layout = synth_corpus(&synth.config())?.write(&output)?;
            emit(
                None,
                &format!(
                    "wrote {} and {}\n",
                    layout.test_manifest.display(),
                    layout.logits_dir.display()
                ),
            )
        }
        Command::Pipeline(args) => {
            let out = run_pipeline(&args.config()?)?;
            if let Some(lm) = &out.lm {
                warn_all(lm);
            }
            emit(None, &out.evaluation.to_text(10))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let detail: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with("For more information") && !l.starts_with("tip:"))
                .collect();
            eprintln!("E_USAGE: {}", detail.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
