use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cswitch::corpus::{load_manifest, LangPair, Language, LanguageSpan, Utterance, write_manifest};
use cswitch::ctc::LogitMatrix;
use cswitch::cslg::{self, CslgFile};
use cswitch::metrics::evaluate;
use cswitch::pipeline::parse_hypotheses;

fn cswitch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cswitch"))
        .args(args)
        .env_remove("CSWITCH_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Asserts failure with exactly one stderr line starting `code: `.
fn fails_with(out: &Output, code: &str) {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with(&format!("{code}: ")), "stderr: {err}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = cswitch(&["synth", "--output", p(dir), "--utterances", "15", "--train-utterances", "150"]);
    stdout(&out);
}

#[test]
fn decode_then_evaluate_agrees_with_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tmp.path().join("c");
    synth(&c);
    let lm = tmp.path().join("lm.arpa");
    let train = c.join("train.jsonl");
    stdout(&cswitch(&["lm-train", "--manifest", p(&train), "--order", "2", "--output", p(&lm)]));
    assert!(fs::read_to_string(&lm).unwrap().starts_with("\\data\\"));

    let hyp = tmp.path().join("hyp.tsv");
    let test = c.join("test.jsonl");
    stdout(&cswitch(&[
        "decode", "--logits", p(&c.join("logits")), "--vocab", p(&c.join("vocab.json")),
        "--manifest", p(&test), "--lm", p(&lm), "--alpha", "1", "--beta", "2", "--beam", "20",
        "--output", p(&hyp),
    ]));
    let report = stdout(&cswitch(&["evaluate", "--ref", p(&test), "--hyp", p(&hyp)]));

    let refs = load_manifest(&test).unwrap();
    let hyps: HashMap<String, String> = parse_hypotheses(&fs::read_to_string(&hyp).unwrap()).unwrap().into_iter().collect();
    assert_eq!(hyps.len(), refs.len());
    let eval = evaluate(&refs, &hyps, false).unwrap();
    assert_eq!(report, eval.to_text(10));

    let records = stdout(&cswitch(&["evaluate", "--ref", p(&test), "--hyp", p(&hyp), "--format", "records"]));
    assert_eq!(records.lines().count(), refs.len() + 1);
}

#[test]
fn greedy_decode_lists_every_logit_file() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let out = stdout(&cswitch(&[
        "decode", "--logits", p(&tmp.path().join("logits")), "--vocab", p(&tmp.path().join("vocab.json")),
    ]));
    let ids: Vec<&str> = out.lines().map(|l| l.split('\t').next().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids.len(), 15);
    assert_eq!(ids, sorted);
}

#[test]
fn lm_tools_score_plain_text() {
    let tmp = tempfile::tempdir().unwrap();
    let text = tmp.path().join("text.txt");
    fs::write(&text, "ngi ya the\nthe work\nngi ya\n").unwrap();
    let lm = tmp.path().join("lm.arpa");
    stdout(&cswitch(&["lm-train", "--text", p(&text), "--order", "2", "--smoothing", "add-k:0.5", "--output", p(&lm)]));
    let scores = stdout(&cswitch(&["lm-score", "--lm", p(&lm), "--text", p(&text)]));
    let scores: Vec<f64> = scores.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(scores.len(), 3);
    assert!(scores.iter().all(|s| *s < 0.0));
    let ppl: f64 = stdout(&cswitch(&["lm-ppl", "--lm", p(&lm), "--text", p(&text)])).trim().parse().unwrap();
    // 10^(-sum / tokens) with one `</s>` per sentence.
    let want = 10f64.powf(-scores.iter().sum::<f64>() / 10.0);
    assert!((ppl - want).abs() < 1e-3 * want, "{ppl} vs {want}");
}

#[test]
fn augment_and_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.jsonl");
    let utt = Utterance::new(
        "a1",
        None,
        LangPair::SotEng,
        vec![
            LanguageSpan::new(Language::Sot, 0.0, 1.0, "ke a"),
            LanguageSpan::new(Language::Eng, 1.0, 2.0, "phone"),
        ],
        3600.0,
    )
    .unwrap();
    write_manifest(&m, &[utt]).unwrap();
    assert_eq!(stdout(&cswitch(&["augment", "--manifest", p(&m), "--scheme", "casing"])), "a1\tke a PHONE\n");
    assert_eq!(
        stdout(&cswitch(&["augment", "--manifest", p(&m), "--scheme", "tags"])),
        "a1\t<sot> ke a </sot> <eng> phone </eng>\n"
    );
    let stats = stdout(&cswitch(&["stats", "--manifest", p(&m)]));
    assert!(stats.lines().any(|l| l.starts_with("sot-eng") && l.ends_with("1.00")), "{stats}");
}

#[test]
fn lid_eval_scores_posterior_files() {
    let tmp = tempfile::tempdir().unwrap();
    let utt = Utterance::new(
        "u1",
        None,
        LangPair::ZulEng,
        vec![
            LanguageSpan::new(Language::Zul, 0.0, 0.1, "sawubona"),
            LanguageSpan::new(Language::Eng, 0.1, 0.2, "hello"),
        ],
        0.2,
    )
    .unwrap();
    let m = tmp.path().join("m.jsonl");
    write_manifest(&m, &[utt]).unwrap();
    let dir = tmp.path().join("post");
    fs::create_dir(&dir).unwrap();
    let symbols = vec!["sil".to_string(), "eng".to_string(), "zul".to_string()];
    // Ten frames: five zul, then five eng, but frame 9 predicted zul.
    let rows: Vec<Vec<f64>> = (0..10)
        .map(|t| if t < 5 || t == 9 { vec![0.0, 0.0, 8.0] } else { vec![0.0, 8.0, 0.0] })
        .collect();
    let matrix = LogitMatrix::from_rows("u1", 50.0, &rows, false).unwrap();
    cslg::write(cslg::cslg_path(&dir, "u1"), &CslgFile::new(matrix, symbols).unwrap()).unwrap();
    let out = stdout(&cswitch(&["lid-eval", "--posteriors", p(&dir), "--manifest", p(&m)]));
    assert!(out.starts_with("LID accuracy 90.00% (9/10 frames)"), "{out}");
    assert!(out.contains("LID cross-entropy"));
}

#[test]
fn pipeline_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let report = stdout(&cswitch(&[
        "pipeline", "--synthetic", "--utterances", "10", "--train-utterances", "100", "--order", "2",
        "--beam", "10", "--threads", "2", "--output", p(&out),
    ]));
    assert!(report.starts_with("WER "));
    for f in ["hypotheses.tsv", "report.txt", "report.jsonl", "lm.arpa", "run.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(out.join("report.txt")).unwrap(), report);
}

#[test]
fn errors_are_single_coded_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.jsonl");
    fails_with(&cswitch(&["stats", "--manifest", p(&missing)]), "E_IO");
    fails_with(&cswitch(&["stats"]), "E_USAGE");
    fails_with(&cswitch(&["frobnicate"]), "E_USAGE");
    fails_with(&cswitch(&["lm-train", "--text", "x", "--smoothing", "kn:1.5", "--output", "y"]), "E_USAGE");

    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"a\"}\n").unwrap();
    fails_with(&cswitch(&["stats", "--manifest", p(&bad)]), "E_MANIFEST_PARSE");

    synth(tmp.path());
    let test = tmp.path().join("test.jsonl");
    let hyp = tmp.path().join("hyp.tsv");
    fs::write(&hyp, "synth-00000\thello\n").unwrap();
    fails_with(&cswitch(&["evaluate", "--ref", p(&test), "--hyp", p(&hyp)]), "E_METRICS");

    let logits = tmp.path().join("logits");
    let vocab = tmp.path().join("vocab.json");
    fails_with(&cswitch(&["decode", "--logits", p(&logits), "--vocab", p(&vocab), "--beam", "0"]), "E_PARAM");
    fs::write(cslg::cslg_path(&logits, "synth-00003"), b"CSLG\x01\x00").unwrap();
    fails_with(&cswitch(&["decode", "--logits", p(&logits), "--vocab", p(&vocab)]), "E_CSLG");

    let text = tmp.path().join("empty.txt");
    fs::write(&text, "\n").unwrap();
    fails_with(&cswitch(&["lm-train", "--text", p(&text), "--output", p(&tmp.path().join("o"))]), "E_LM");
}
