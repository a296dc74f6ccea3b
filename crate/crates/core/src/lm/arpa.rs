use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Entry, NGramModel, BOS, EOS, MAX_ORDER, UNK};
use crate::error::{Error, Result};

/// Decimal places for log10 values. Enough that summing a full backoff chain
/// of rounded values stays far below 1e-6.
const DECIMALS: usize = 9;

/// log10 values at or below this are read as probability zero.
const LOG_ZERO: f64 = -99.0;

fn fmt_log10(ln: f64) -> String {
    if ln == f64::NEG_INFINITY {
        "-99".to_string()
    } else {
        let v = ln / std::f64::consts::LN_10;
        // Avoid printing "-0.000000000".
        let s = format!("{v:.DECIMALS$}");
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    }
}

pub fn write_arpa_string(model: &NGramModel) -> String {
    let mut out = String::new();
    out.push_str("\\data\\\n");
    for n in 1..=model.order() {
        let _ = writeln!(out, "ngram {n}={}", model.ngram_count(n));
    }
    for n in 1..=model.order() {
        let _ = write!(out, "\n\\{n}-grams:\n");
        let mut rows: Vec<(Vec<&str>, &Entry)> = model.tables()[n - 1]
            .iter()
            .map(|(k, e)| (k.iter().map(|&id| model.word(id)).collect(), e))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        for (words, entry) in rows {
            let _ = write!(out, "{}\t{}", fmt_log10(entry.ln_prob), words.join(" "));
            if let Some(b) = entry.ln_backoff {
                let _ = write!(out, "\t{}", fmt_log10(b));
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

pub fn write_arpa(model: &NGramModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_arpa_string(model)).map_err(|e| Error::io(path, e))
}

pub fn read_arpa(path: impl AsRef<Path>) -> Result<NGramModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_arpa_str(&text)
}

fn parse_log10(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Arpa {
        line,
        message: format!("non-numeric field {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Arpa {
            line,
            message: format!("non-finite value {field:?}"),
        });
    }
    Ok(if v <= LOG_ZERO {
        f64::NEG_INFINITY
    } else {
        v * std::f64::consts::LN_10
    })
}

pub fn read_arpa_str(text: &str) -> Result<NGramModel> {
    let err = |line: usize, message: String| Error::Arpa { line, message };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());

    match lines.next() {
        Some((_, l)) if l.trim() == "\\data\\" => {}
        Some((n, l)) => return Err(err(n, format!("expected \\data\\ header, found {l:?}"))),
        None => return Err(err(0, "empty file".into())),
    }

    let mut declared: Vec<usize> = Vec::new();
    let mut pending = None;
    for (n, l) in lines.by_ref() {
        let l = l.trim();
        if let Some(rest) = l.strip_prefix("ngram ") {
            let (order, count) = rest
                .split_once('=')
                .ok_or_else(|| err(n, format!("malformed count line {l:?}")))?;
            let order: usize = order
                .trim()
                .parse()
                .map_err(|_| err(n, format!("non-numeric order in {l:?}")))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| err(n, format!("non-numeric count in {l:?}")))?;
            if order != declared.len() + 1 || order > MAX_ORDER {
                return Err(err(n, format!("unexpected order {order} in header")));
            }
            declared.push(count);
        } else {
            pending = Some((n, l));
            break;
        }
    }
    if declared.is_empty() {
        return Err(err(0, "header declares no n-gram counts".into()));
    }
    let order = declared.len();

    let mut rows: Vec<Vec<(Vec<String>, f64, Option<f64>, usize)>> = vec![Vec::new(); order];
    let mut section: Option<usize> = None;
    let mut ended = false;
    let mut next = pending;
    while let Some((n, l)) = next.take().or_else(|| lines.next()) {
        let trimmed = l.trim();
        if trimmed == "\\end\\" {
            ended = true;
            break;
        }
        if let Some(inner) = trimmed.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
            let k: usize = inner
                .parse()
                .map_err(|_| err(n, format!("malformed section header {trimmed:?}")))?;
            if k == 0 || k > order {
                return Err(err(n, format!("section {k} outside declared order {order}")));
            }
            if let Some(prev) = section {
                if rows[prev - 1].len() != declared[prev - 1] {
                    return Err(err(
                        n,
                        format!(
                            "ngram {prev}={} declared but {} entries found",
                            declared[prev - 1],
                            rows[prev - 1].len()
                        ),
                    ));
                }
                if k != prev + 1 {
                    return Err(err(n, format!("section {k} follows section {prev}")));
                }
            } else if k != 1 {
                return Err(err(n, "first section must be \\1-grams:".into()));
            }
            section = Some(k);
            continue;
        }
        let k = section.ok_or_else(|| err(n, format!("entry {trimmed:?} outside a section")))?;
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != k + 1 && fields.len() != k + 2 {
            return Err(err(
                n,
                format!("expected {} or {} fields for a {k}-gram", k + 1, k + 2),
            ));
        }
        let prob = parse_log10(fields[0], n)?;
        let words = fields[1..=k].iter().map(|s| s.to_string()).collect();
        let backoff = fields.get(k + 1).map(|f| parse_log10(f, n)).transpose()?;
        rows[k - 1].push((words, prob, backoff, n));
    }
    if !ended {
        return Err(err(text.lines().count(), "missing \\end\\ marker".into()));
    }
    for k in 1..=order {
        if rows[k - 1].len() != declared[k - 1] {
            return Err(err(
                0,
                format!(
                    "ngram {k}={} declared but {} entries found",
                    declared[k - 1],
                    rows[k - 1].len()
                ),
            ));
        }
    }

    let mut unigrams: Vec<String> = rows[0]
        .iter()
        .map(|r| r.0[0].clone())
        .filter(|w| w != UNK && w != BOS && w != EOS)
        .collect();
    unigrams.sort();
    let mut model = NGramModel::with_vocab(order, unigrams);
    for (k, table) in rows.into_iter().enumerate() {
        for (words, prob, backoff, line) in table {
            let ids: Vec<u32> = words
                .iter()
                .map(|w| {
                    model
                        .ids
                        .get(w)
                        .copied()
                        .ok_or_else(|| err(line, format!("word {w:?} missing from unigrams")))
                })
                .collect::<Result<_>>()?;
            if k > 0 && model.entry(&ids[..k]).is_none() {
                return Err(err(
                    line,
                    format!("context {:?} has no {k}-gram entry", &words[..k]),
                ));
            }
            if model.entry(&ids).is_some() {
                return Err(err(line, format!("duplicate n-gram {words:?}")));
            }
            model.insert(
                ids,
                Entry {
                    ln_prob: prob,
                    ln_backoff: backoff,
                },
            );
        }
    }
    for special in [UNK, BOS, EOS] {
        let id = model.word_id(special);
        if model.entry(&[id]).is_none() {
            model.insert(
                vec![id],
                Entry {
                    ln_prob: f64::NEG_INFINITY,
                    ln_backoff: None,
                },
            );
        }
    }
    Ok(model)
}
