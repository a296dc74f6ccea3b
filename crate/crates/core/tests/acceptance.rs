//! Acceptance checks, one PASS/FAIL line each. Exits nonzero on any failure.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cswitch::augment::{
    apply_casing, apply_tags, build_vocab, invert_casing, labeled_words, parse_tags, render_plain, LabeledWord,
    LabeledWordSeq, Scheme, Vocabulary, BLANK, SPACE,
};
use cswitch::corpus::{LangPair, Language, LanguageSpan, Utterance};
use cswitch::ctc::{beam_decode, collapse, ctc_loss, exhaustive_decode, DecodeParams, LogitMatrix};
use cswitch::langid::{
    frames_from_spans, lid_accuracy, lid_cross_entropy, multitask_loss, FrameClass, MultiTaskWeights,
};
use cswitch::lm::{read_arpa_str, train, write_arpa_string, NGramModel, Smoothing, BOS, EOS};
use cswitch::metrics::{edit_distance, wer_by_language};
use cswitch::pipeline::{run_pipeline, write_outputs, ExperimentConfig, Source, HYPOTHESES_FILE};
use cswitch::synth::SynthConfig;
use cswitch::Error;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn letters_vocab(v: usize) -> Vocabulary {
    let mut symbols = vec![BLANK.to_string(), SPACE.to_string()];
    symbols.extend((b'a'..).take(v - 2).map(|c| (c as char).to_string()));
    Vocabulary::from_symbols(symbols, Scheme::Plain, None).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, t: usize, v: usize) -> LogitMatrix {
    let values = (0..t * v).map(|_| rng.random_range(-4.0..4.0)).collect();
    LogitMatrix::new("x", 50.0, t, v, values, false).unwrap().normalize().unwrap()
}

/// Every length-`t` path over `v` symbols with its log-probability.
fn for_each_path(m: &LogitMatrix, mut f: impl FnMut(&[usize], f64)) {
    let (t, v) = (m.frames(), m.symbols());
    let mut path = vec![0usize; t];
    loop {
        let lp: f64 = path.iter().enumerate().map(|(i, &s)| m.row(i)[s]).sum();
        f(&path, lp);
        let mut i = 0;
        while i < t {
            path[i] += 1;
            if path[i] < v {
                break;
            }
            path[i] = 0;
            i += 1;
        }
        if i == t {
            return;
        }
    }
}

fn ctc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut spent = Duration::ZERO;
    let mut compared = 0;
    for case in 0..500 {
        let t = rng.random_range(1..=8);
        let v = rng.random_range(2..=5);
        let vocab = letters_vocab(v);
        let m = random_matrix(&mut rng, t, v);
        let len = rng.random_range(0..=4);
        let target: Vec<usize> = (0..len).map(|_| rng.random_range(1..v)).collect();
        let mut prob = 0.0;
        for_each_path(&m, |path, lp| {
            if collapse(path, 0) == target {
                prob += lp.exp();
            }
        });
        let start = Instant::now();
        let got = ctc_loss(&m, &target, &vocab);
        spent += start.elapsed();
        match got {
            Ok(loss) => {
                let want = -prob.ln();
                ensure((loss - want).abs() <= 1e-9, || {
                    format!("case {case}: T={t} V={v} target {target:?}: loss {loss} vs oracle {want}")
                })?;
                compared += 1;
            }
            Err(Error::TargetTooLong { .. }) => {
                ensure(prob == 0.0, || format!("case {case}: rejected a target with mass {prob}"))?
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        }
    }
    ensure(spent < Duration::from_secs(10), || format!("ctc_loss took {spent:?}"))?;
    Ok(format!("500 instances ({compared} feasible), ctc_loss time {spent:.2?}"))
}

fn sequences(alphabet: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &a in alphabet {
                let mut s2: Vec<usize> = s.clone();
                s2.push(a);
                next.push(s2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn ctc_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let t = rng.random_range(1..=4);
        let v = rng.random_range(2..=5);
        let vocab = letters_vocab(v);
        let m = random_matrix(&mut rng, t, v);
        let alphabet: Vec<usize> = (1..v).collect();
        let mut total = 0.0;
        for target in sequences(&alphabet, t) {
            match ctc_loss(&m, &target, &vocab) {
                Ok(loss) => total += (-loss).exp(),
                Err(Error::TargetTooLong { .. }) => {}
                Err(e) => return Err(format!("case {case}: {e}")),
            }
        }
        worst = worst.max((total - 1.0).abs());
        ensure((total - 1.0).abs() <= 1e-6, || format!("case {case}: T={t} V={v} total {total}"))?;
    }
    Ok(format!("100 instances, max |sum - 1| = {worst:.1e}"))
}

fn tiny_lm(rng: &mut ChaCha8Rng, letters: &[char]) -> NGramModel {
    let sentences: Vec<Vec<String>> = (0..rng.random_range(2..=6))
        .map(|_| {
            (0..rng.random_range(1..=3))
                .map(|_| (0..rng.random_range(1..=2)).map(|_| *letters.choose(rng).unwrap()).collect())
                .collect()
        })
        .collect();
    let order = rng.random_range(1..=3);
    let smoothing = if rng.random_bool(0.5) {
        Smoothing::AddK(rng.random_range(0.05..1.0))
    } else {
        Smoothing::KneserNey { discount: 0.75 }
    };
    train(&sentences, order, smoothing).unwrap()
}

fn beam_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut runs = 0;
    for case in 0..200 {
        let t = rng.random_range(1..=5);
        let v = rng.random_range(3..=4);
        let vocab = letters_vocab(v);
        let letters: Vec<char> = vocab.symbols()[2..].iter().map(|s| s.chars().next().unwrap()).collect();
        let m = random_matrix(&mut rng, t, v);
        let lm = tiny_lm(&mut rng, &letters);
        let beta = rng.random_range(-1.0..1.0);
        for (lm, alpha) in [(None, 0.0), (Some(&lm), 0.0), (Some(&lm), 1.5)] {
            let want = exhaustive_decode(&m, &vocab, lm, alpha, beta).map_err(|e| e.to_string())?;
            let params = DecodeParams {
                beam_width: v.pow(t as u32),
                lm_weight: alpha,
                word_bonus: beta,
                lm,
            };
            let got = beam_decode(&m, &vocab, &params).map_err(|e| e.to_string())?;
            let top = &got[0];
            ensure(top.text == want.text && (top.combined - want.combined).abs() <= 1e-9, || {
                format!(
                    "case {case} (T={t} V={v} lm={} alpha={alpha}): beam {:?} {} vs exhaustive {:?} {}",
                    lm.is_some(),
                    top.text,
                    top.combined,
                    want.text,
                    want.combined
                )
            })?;
            runs += 1;
        }
    }
    Ok(format!("200 instances, {runs} decodes agree"))
}

/// Every history of length < order seen in training, as strings.
fn observed_histories(sentences: &[Vec<String>], order: usize) -> HashSet<Vec<String>> {
    let mut out = HashSet::new();
    for s in sentences {
        let mut padded: Vec<String> = vec![BOS.to_string(); order - 1];
        padded.extend(s.iter().cloned());
        padded.push(EOS.to_string());
        for i in order - 1..padded.len() {
            for k in 0..order {
                out.insert(padded[i - k..i].to_vec());
            }
        }
    }
    out
}

fn lm_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let words = ["ngi", "ya", "the", "to", "khona", "work", "lapho", "go"];
    let mut contexts = 0;
    let mut worst_sum: f64 = 0.0;
    let mut worst_arpa: f64 = 0.0;
    for corpus in 0..50 {
        let sentences: Vec<Vec<String>> = (0..rng.random_range(1..=8))
            .map(|_| {
                (0..rng.random_range(1..=5))
                    .map(|_| words.choose(&mut rng).unwrap().to_string())
                    .collect()
            })
            .collect();
        for order in 1..=3 {
            for smoothing in [Smoothing::AddK(rng.random_range(0.01..1.0)), Smoothing::KneserNey { discount: 0.75 }] {
                let lm = train(&sentences, order, smoothing).map_err(|e| e.to_string())?;
                let back = read_arpa_str(&write_arpa_string(&lm)).map_err(|e| e.to_string())?;
                let events: Vec<String> = lm.event_ids().map(|id| lm.word(id).to_string()).collect();
                let mut hists = observed_histories(&sentences, order);
                hists.extend(
                    lm.contexts()
                        .into_iter()
                        .map(|c| c.iter().map(|&id| lm.word(id).to_string()).collect()),
                );
                for h in &hists {
                    let h: Vec<&str> = h.iter().map(String::as_str).collect();
                    let total: f64 = events.iter().map(|w| 10f64.powf(lm.score_word(&h, w))).sum();
                    worst_sum = worst_sum.max((total - 1.0).abs());
                    ensure((total - 1.0).abs() <= 1e-6, || {
                        format!("corpus {corpus} order {order} {smoothing}: context {h:?} sums to {total}")
                    })?;
                    for w in &events {
                        let (a, b) = (lm.score_word(&h, w), back.score_word(&h, w));
                        worst_arpa = worst_arpa.max((a - b).abs());
                        ensure((a - b).abs() <= 1e-6, || {
                            format!("corpus {corpus} order {order} {smoothing}: ARPA moved {h:?} {w} from {a} to {b}")
                        })?;
                    }
                    contexts += 1;
                }
            }
        }
    }
    Ok(format!(
        "{contexts} contexts, max |sum - 1| = {worst_sum:.1e}, max ARPA drift = {worst_arpa:.1e}"
    ))
}

fn oracle_distance(r: &[u8], h: &[u8]) -> usize {
    fn go(r: &[u8], h: &[u8], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == r.len() {
            return h.len() - j;
        }
        if j == h.len() {
            return r.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = (go(r, h, i + 1, j + 1, memo) + usize::from(r[i] != h[j]))
            .min(go(r, h, i + 1, j, memo) + 1)
            .min(go(r, h, i, j + 1, memo) + 1);
        memo.insert((i, j), d);
        d
    }
    go(r, h, 0, 0, &mut HashMap::new())
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let langs = [Language::Eng, Language::Zul];
    for case in 0..1000 {
        let r: Vec<u8> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
        let h: Vec<u8> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
        let stats = edit_distance(&r, &h);
        let want = oracle_distance(&r, &h);
        ensure(stats.errors() == want && stats.ref_len == r.len(), || {
            format!("case {case}: {r:?} vs {h:?}: {stats:?}, oracle {want}")
        })?;
        ensure(r.len() + stats.insertions == h.len() + stats.deletions, || {
            format!("case {case}: operation counts inconsistent {stats:?}")
        })?;
        let word = |x: u8| ["x", "y", "z"][x as usize];
        let reference = LabeledWordSeq(
            r.iter()
                .map(|&x| LabeledWord::new(word(x), *langs.choose(&mut rng).unwrap()))
                .collect(),
        );
        let hyp: Vec<&str> = h.iter().map(|&x| word(x)).collect();
        let by_lang = wer_by_language(&reference, &hyp);
        let global = edit_distance(&reference.words(), &hyp);
        ensure(by_lang.total() == global, || {
            format!("case {case}: per-language {:?} vs global {global:?}", by_lang.total())
        })?;
    }
    Ok("1000 pairs match the recursive oracle; per-language sums equal global stats".into())
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let mut w: String = (0..rng.random_range(1..=7))
        .map(|_| (b'a' + rng.random_range(0..26)) as char)
        .collect();
    if rng.random_bool(0.1) {
        let at = rng.random_range(0..=w.len());
        w.insert(at, *['\'', '-'].choose(rng).unwrap());
    }
    w
}

fn random_utterance(rng: &mut ChaCha8Rng, id: usize) -> Utterance {
    let pair = *[LangPair::ZulEng, LangPair::XhoEng, LangPair::SotEng, LangPair::TsnEng]
        .choose(rng)
        .unwrap();
    let mut spans = Vec::new();
    let mut t = 0.0;
    for _ in 0..rng.random_range(1..=4) {
        let lang = *pair.languages().choose(rng).unwrap();
        let text: Vec<String> = (0..rng.random_range(1..=4)).map(|_| random_word(rng)).collect();
        spans.push(LanguageSpan::new(lang, t, t + 1.0, text.join(" ")));
        t += 1.0;
    }
    Utterance::new(format!("u{id}"), None, pair, spans, t).unwrap()
}

fn augmentation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for id in 0..1000 {
        let utt = random_utterance(&mut rng, id);
        let gold = labeled_words(&utt);
        let cased = apply_casing(&utt).map_err(|e| e.to_string())?;
        let back = invert_casing(&cased, utt.lang_pair).map_err(|e| e.to_string())?;
        ensure(back == gold && render_plain(&back) == utt.flat_transcript(), || {
            format!("casing lost information on {cased:?}")
        })?;
        let tagged = apply_tags(&utt);
        let back = parse_tags(&tagged).map_err(|e| e.to_string())?;
        ensure(back == gold && render_plain(&back) == utt.flat_transcript(), || {
            format!("tags lost information on {tagged:?}")
        })?;
    }
    for case in 0..100 {
        let alphabet: Vec<char> = ('a'..='z').filter(|_| rng.random_bool(0.5)).chain(['\'', '1']).collect();
        let texts: Vec<String> = (0..5)
            .map(|_| (0..8).map(|_| *alphabet.choose(&mut rng).unwrap()).collect())
            .collect();
        let used: HashSet<char> = texts.iter().flat_map(|t| t.chars()).collect();
        let letters = used.iter().filter(|c| c.is_ascii_alphabetic()).count();
        let plain = build_vocab(&texts, Scheme::Plain, LangPair::ZulEng).map_err(|e| e.to_string())?;
        let casing = build_vocab(&texts, Scheme::Casing, LangPair::ZulEng).map_err(|e| e.to_string())?;
        let casing_letters = casing.symbols().iter().filter(|s| s.len() == 1 && s.as_bytes()[0].is_ascii_alphabetic()).count();
        ensure(casing_letters == 2 * letters && casing.len() == plain.len() + letters, || {
            format!("case {case}: {letters} letters gave {casing_letters} cased symbols")
        })?;
    }
    Ok("1000 utterances invert exactly under casing and tags; casing doubles 100 letter sets".into())
}

fn multitask_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (a, b): (f64, f64) = (rng.random_range(0.0..50.0), rng.random_range(0.0..50.0));
        let one = multitask_loss(a, b, MultiTaskWeights::new(1.0).unwrap()).unwrap();
        ensure(one.to_bits() == a.to_bits(), || format!("λ=1 gave {one} for l_ctc {a}"))?;
        for lambda in [0.6, 0.75, 0.9] {
            let got = multitask_loss(a, b, MultiTaskWeights::new(lambda).unwrap()).unwrap();
            let want = lambda * a + (1.0 - lambda) * b;
            ensure((got - want).abs() <= 1e-15 * want.max(1.0), || {
                format!("λ={lambda}: {got} vs {want}")
            })?;
        }
    }
    for lambda in [0.5, 0.49, 0.0, -1.0, 1.0 + 1e-12, f64::NAN] {
        ensure(MultiTaskWeights::new(lambda).is_err(), || format!("λ={lambda} accepted"))?;
    }
    Ok("exact at λ=1, linear at λ ∈ {0.6, 0.75, 0.9}, λ ≤ 0.5 rejected".into())
}

/// The desk-scale corpus: trigram source grammar, noise for a greedy WER
/// near one half.
fn ordering_config(order: usize) -> ExperimentConfig {
    let synth = SynthConfig {
        seed: 42,
        utterances: 500,
        noise: 1.25,
        grammar_order: 3,
        ..SynthConfig::default()
    };
    ExperimentConfig {
        lm_order: order,
        lm_weight: 1.0,
        word_bonus: 2.0,
        beam_width: 100,
        threads: Some(1),
        ..ExperimentConfig::new(Source::Synthetic(synth))
    }
}

fn lm_ordering() -> Outcome {
    let start = Instant::now();
    let mut wer = Vec::new();
    for order in [0, 2, 3] {
        let out = run_pipeline(&ordering_config(order)).map_err(|e| e.to_string())?;
        wer.push(out.evaluation.wer());
    }
    let elapsed = start.elapsed();
    let (g, b, t) = (wer[0], wer[1], wer[2]);
    let summary = format!("greedy {g:.4}, bigram {b:.4}, trigram {t:.4}, {elapsed:.1?}");
    ensure((0.3..=0.6).contains(&g), || format!("greedy WER outside [0.3, 0.6]: {summary}"))?;
    ensure(t <= b && b <= g, || format!("not ordered: {summary}"))?;
    ensure(t <= 0.7 * g, || format!("trigram gain below 30%: {summary}"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("too slow: {summary}"))?;
    Ok(summary)
}

fn lid_plumbing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rate = 50.0;
    let classes = [FrameClass::Silence, FrameClass::Lang(Language::Eng), FrameClass::Lang(Language::Xho)];
    for case in 0..200 {
        let mut spans = Vec::new();
        let mut expected = Vec::new();
        let mut frame = 0usize;
        for _ in 0..rng.random_range(1..=5) {
            let gap = rng.random_range(0..4);
            expected.extend(std::iter::repeat_n(FrameClass::Silence, gap));
            frame += gap;
            let len = rng.random_range(1..10);
            let lang = *[Language::Eng, Language::Xho].choose(&mut rng).unwrap();
            spans.push(LanguageSpan::new(lang, frame as f64 / rate, (frame + len) as f64 / rate, "w"));
            expected.extend(std::iter::repeat_n(FrameClass::Lang(lang), len));
            frame += len;
        }
        let tail = rng.random_range(0..3);
        expected.extend(std::iter::repeat_n(FrameClass::Silence, tail));
        frame += tail;
        let utt = Utterance::new("u", None, LangPair::XhoEng, spans, frame as f64 / rate).unwrap();
        let gold = frames_from_spans(&utt, rate, frame).map_err(|e| e.to_string())?;
        ensure(gold.labels == expected, || format!("case {case}: labels differ from closed form"))?;
        let acc = lid_accuracy(&gold, &gold, false).map_err(|e| e.to_string())?;
        ensure(acc == 1.0, || format!("case {case}: self-accuracy {acc}"))?;
        let one_hot: Vec<Vec<f64>> = gold
            .labels
            .iter()
            .map(|g| classes.iter().map(|c| if c == g { 1.0 } else { 0.0 }).collect())
            .collect();
        let ce = lid_cross_entropy(&one_hot, &classes, &gold).map_err(|e| e.to_string())?;
        ensure(ce == 0.0, || format!("case {case}: one-hot cross-entropy {ce}"))?;
    }
    Ok("200 aligned utterances: closed-form labels, accuracy 1, cross-entropy 0".into())
}

fn determinism() -> Outcome {
    let mut bodies = Vec::new();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for threads in [1, 4] {
        let mut config = ordering_config(3);
        if let Source::Synthetic(s) = &mut config.source {
            s.utterances = 120;
        }
        config.threads = Some(threads);
        let out = run_pipeline(&config).map_err(|e| e.to_string())?;
        let dir = tmp.path().join(format!("t{threads}"));
        write_outputs(&dir, &config, &out).map_err(|e| e.to_string())?;
        bodies.push(std::fs::read(dir.join(HYPOTHESES_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(bodies[0] == bodies[1], || "hypothesis files differ between 1 and 4 threads".into())?;
    Ok(format!("{} identical bytes at 1 and 4 threads", bodies[0].len()))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("ctc loss matches path enumeration", ctc_oracle),
        ("ctc label distribution sums to one", ctc_normalization),
        ("beam search matches exhaustive decoding", beam_oracle),
        ("lm normalization and ARPA round-trip", lm_normalization),
        ("edit distance and per-language metrics", metric_oracle),
        ("augmentation round-trips", augmentation),
        ("multi-task loss contract", multitask_contract),
        ("lm order improves synthetic WER", lm_ordering),
        ("language ID plumbing", lid_plumbing),
        ("pipeline determinism across threads", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
