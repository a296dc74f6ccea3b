//! Prefix beam search with word-level shallow fusion.
//!
//! Each beam entry is a collapsed label prefix carrying two acoustic masses:
//! paths ending in blank and paths ending in the prefix's last label. The LM
//! and word bonus are charged once per word, when the space after it is
//! emitted, and for the trailing word plus `</s>` when the utterance ends.

use std::f64::consts::LN_10;

use super::{log_add, rank, DecodeParams, LogitMatrix, ScoredHypothesis};
use crate::augment::Vocabulary;
use crate::error::{Error, Result};
use crate::lm::NGramModel;

const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    parent: u32,
    symbol: u32,
    /// Labels since the last space.
    word_len: u32,
    ctx: u32,
}

/// LM state shared by every prefix between two word boundaries.
#[derive(Debug, Clone)]
struct WordContext {
    history: Vec<u32>,
    lm_log10: f64,
    words: usize,
}

struct PrefixTree<'a> {
    vocab: &'a Vocabulary,
    lm: Option<&'a NGramModel>,
    lm_weight: f64,
    word_bonus: f64,
    nodes: Vec<Node>,
    /// (symbol, child) per node.
    children: Vec<Vec<(u32, u32)>>,
    contexts: Vec<WordContext>,
}

impl<'a> PrefixTree<'a> {
    fn new(vocab: &'a Vocabulary, params: &DecodeParams<'a>) -> Self {
        let lm = params.active_lm();
        let root_ctx = WordContext {
            history: lm.map_or_else(Vec::new, NGramModel::start_history),
            lm_log10: 0.0,
            words: 0,
        };
        PrefixTree {
            vocab,
            lm,
            lm_weight: params.lm_weight,
            word_bonus: params.word_bonus,
            nodes: vec![Node {
                parent: NO_PARENT,
                symbol: NO_PARENT,
                word_len: 0,
                ctx: 0,
            }],
            children: vec![Vec::new()],
            contexts: vec![root_ctx],
        }
    }

    fn last_word(&self, node: u32) -> String {
        let mut n = &self.nodes[node as usize];
        let mut symbols = Vec::with_capacity(n.word_len as usize);
        for _ in 0..n.word_len {
            symbols.push(n.symbol as usize);
            n = &self.nodes[n.parent as usize];
        }
        symbols.reverse();
        self.vocab.decode(&symbols)
    }

    fn text(&self, node: u32) -> String {
        let mut symbols = Vec::new();
        let mut cur = node;
        while cur != 0 {
            let n = &self.nodes[cur as usize];
            symbols.push(n.symbol as usize);
            cur = n.parent;
        }
        symbols.reverse();
        self.vocab.decode(&symbols)
    }

    /// Context after appending `word` to `ctx`.
    fn advance(&self, ctx: &WordContext, word: &str) -> WordContext {
        let mut next = ctx.clone();
        next.words += 1;
        if let Some(lm) = self.lm {
            let id = lm.word_id(word);
            next.lm_log10 += lm.score_word_ids(&ctx.history, id);
            next.history.push(id);
            let keep = lm.order().saturating_sub(1);
            if next.history.len() > keep {
                next.history.drain(..next.history.len() - keep);
            }
        }
        next
    }

    fn child(&mut self, parent: u32, symbol: u32) -> u32 {
        if let Some(&(_, c)) = self.children[parent as usize].iter().find(|e| e.0 == symbol) {
            return c;
        }
        let p = self.nodes[parent as usize];
        let node = if symbol as usize == self.vocab.space() {
            let ctx = if p.word_len > 0 {
                let word = self.last_word(parent);
                let next = self.advance(&self.contexts[p.ctx as usize], &word);
                self.contexts.push(next);
                (self.contexts.len() - 1) as u32
            } else {
                p.ctx
            };
            Node {
                parent,
                symbol,
                word_len: 0,
                ctx,
            }
        } else {
            Node {
                parent,
                symbol,
                word_len: p.word_len + 1,
                ctx: p.ctx,
            }
        };
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.children.push(Vec::new());
        self.children[parent as usize].push((symbol, id));
        id
    }

    fn fusion(&self, node: u32) -> f64 {
        let ctx = &self.contexts[self.nodes[node as usize].ctx as usize];
        self.lm_weight * LN_10 * ctx.lm_log10 + self.word_bonus * ctx.words as f64
    }

    fn finish(&self, node: u32, acoustic: f64) -> ScoredHypothesis {
        let n = self.nodes[node as usize];
        let mut ctx = self.contexts[n.ctx as usize].clone();
        if n.word_len > 0 {
            ctx = self.advance(&ctx, &self.last_word(node));
        }
        if let Some(lm) = self.lm {
            ctx.lm_log10 += lm.score_word_ids(&ctx.history, lm.eos_id());
        }
        ScoredHypothesis::new(
            self.text(node),
            acoustic,
            ctx.lm_log10,
            ctx.words,
            self.lm_weight,
            self.word_bonus,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Masses {
    blank: f64,
    label: f64,
}

impl Masses {
    const ZERO: Masses = Masses {
        blank: f64::NEG_INFINITY,
        label: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.label)
    }
}

/// Prefix beam search. Returns up to `beam_width` hypotheses, best first.
///
/// With `beam_width` at least the number of distinct reachable prefixes no
/// pruning happens and the top hypothesis matches [`super::exhaustive_decode`].
pub fn beam_decode(
    m: &LogitMatrix,
    vocab: &Vocabulary,
    params: &DecodeParams,
) -> Result<Vec<ScoredHypothesis>> {
    params.validate()?;
    m.check_vocab(vocab)?;
    if !m.is_normalized() {
        return Err(Error::Logits(format!(
            "matrix `{}` must be normalized before beam search",
            m.utterance_id
        )));
    }

    let blank = vocab.blank();
    let mut tree = PrefixTree::new(vocab, params);
    let mut beam: Vec<(u32, Masses)> = vec![(
        0,
        Masses {
            blank: 0.0,
            label: f64::NEG_INFINITY,
        },
    )];
    // Scratch for the next frame: masses per touched node, and each node's
    // slot in that list.
    let mut next: Vec<(u32, Masses)> = Vec::new();
    let mut slot: Vec<u32> = Vec::new();

    for t in 0..m.frames() {
        let row = m.row(t);
        next.clear();
        let mut bump = |next: &mut Vec<(u32, Masses)>, node: u32| -> usize {
            let n = node as usize;
            if n >= slot.len() {
                slot.resize(n + 1, NO_PARENT);
            }
            if slot[n] == NO_PARENT {
                slot[n] = next.len() as u32;
                next.push((node, Masses::ZERO));
            }
            slot[n] as usize
        };
        for &(node, masses) in &beam {
            let total = masses.total();
            let i = bump(&mut next, node);
            next[i].1.blank = log_add(next[i].1.blank, total + row[blank]);
            let last = tree.nodes[node as usize].symbol;
            for (c, &lp) in row.iter().enumerate() {
                if c == blank || lp == f64::NEG_INFINITY {
                    continue;
                }
                let child = tree.child(node, c as u32);
                let extend = if c as u32 == last {
                    let i = bump(&mut next, node);
                    next[i].1.label = log_add(next[i].1.label, masses.label + lp);
                    masses.blank + lp
                } else {
                    total + lp
                };
                let i = bump(&mut next, child);
                next[i].1.label = log_add(next[i].1.label, extend);
            }
        }
        for &(node, _) in &next {
            slot[node as usize] = NO_PARENT;
        }

        let mut scored: Vec<(u32, Masses, f64)> = next
            .iter()
            .filter(|(_, m)| m.total() > f64::NEG_INFINITY)
            .map(|&(node, masses)| (node, masses, masses.total() + tree.fusion(node)))
            .collect();
        if scored.len() > params.beam_width {
            // Prefix texts are unique, so this order is total.
            let by_score = |a: &(u32, Masses, f64), b: &(u32, Masses, f64)| {
                b.2.total_cmp(&a.2)
                    .then_with(|| tree.text(a.0).cmp(&tree.text(b.0)))
            };
            scored.select_nth_unstable_by(params.beam_width - 1, by_score);
            scored.truncate(params.beam_width);
        }
        beam = scored.into_iter().map(|(n, m, _)| (n, m)).collect();
        if beam.is_empty() {
            break;
        }
    }

    let mut hyps: Vec<ScoredHypothesis> = beam
        .iter()
        .map(|&(node, masses)| tree.finish(node, masses.total()))
        .collect();
    hyps.sort_by(rank);
    hyps.truncate(params.beam_width);
    Ok(hyps)
}
