//! CTC prefix-tree beam search.
//!
//! Each tree node is one label prefix carrying two CTC states: the
//! probability that the prefix ends in its own label at the current frame,
//! and the probability that it ends in a trailing blank. Scores are kept in
//! natural-log form. Extensions are weighted by a character model raised to
//! `alpha`; completed words are rescored by an optional ARPA word model.
//!
//! The tree is pruned in width (top `beam_width` hypotheses per frame) and in
//! depth: periodically the deepest node shared by every live hypothesis is
//! emitted as final output and becomes the new root.

mod charlm;
mod oracle;

use std::cmp::Ordering;

use thiserror::Error;

pub use charlm::{CharLm, NoCharLm, TableCharLm};
pub use oracle::{brute_force_decode, BRUTE_FORCE_LIMIT};

use crate::wordlm::{WordHistory, WordScorer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("posterior row has {got} entries, expected {expected}")]
    PosteriorLength { expected: usize, got: usize },
    #[error("posterior row is not a distribution (sum {sum}, min {min})")]
    NotNormalized { sum: f64, min: f64 },
    #[error("no live hypothesis")]
    Empty,
    #[error("instance too large to enumerate ({paths} paths)")]
    TooLarge { paths: f64 },
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
    #[error("character model: {0}")]
    CharLm(String),
}

/// Output labels of the acoustic model. Blank is always the last index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    delimiter: Option<usize>,
    eos: Option<usize>,
}

/// Rendered form of the end-of-sentence label.
pub const EOS_CHAR: char = '\n';

impl Alphabet {
    pub fn new(symbols: Vec<char>, delimiter: Option<usize>, eos: Option<usize>) -> Result<Self, DecodeError> {
        if symbols.is_empty() {
            return Err(DecodeError::Alphabet("no labels".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(c) = symbols.iter().find(|c| !seen.insert(**c)) {
            return Err(DecodeError::Alphabet(format!("duplicate symbol {c:?}")));
        }
        for idx in [delimiter, eos].into_iter().flatten() {
            if idx >= symbols.len() {
                return Err(DecodeError::Alphabet(format!("index {idx} out of range")));
            }
        }
        if delimiter.is_some() && delimiter == eos {
            return Err(DecodeError::Alphabet("delimiter and EOS must differ".into()));
        }
        Ok(Self { symbols, delimiter, eos })
    }

    /// 26 letters, space (word delimiter), apostrophe, period, EOS; blank at 30.
    pub fn standard() -> Self {
        let mut symbols: Vec<char> = ('A'..='Z').collect();
        symbols.extend([' ', '\'', '.', EOS_CHAR]);
        Self { symbols, delimiter: Some(26), eos: Some(29) }
    }

    /// `n` letters starting at 'A', no delimiter or EOS.
    pub fn letters(n: usize) -> Self {
        Self { symbols: (0..n as u8).map(|i| (b'A' + i) as char).collect(), delimiter: None, eos: None }
    }

    /// Non-blank labels, which is also the character model's dimension.
    pub fn labels(&self) -> usize {
        self.symbols.len()
    }

    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    /// Acoustic model output dimension.
    pub fn am_dim(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn delimiter(&self) -> Option<usize> {
        self.delimiter
    }

    pub fn eos(&self) -> Option<usize> {
        self.eos
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn symbol(&self, label: usize) -> char {
        self.symbols[label]
    }

    pub fn render(&self, labels: &[usize]) -> String {
        labels.iter().map(|&l| self.symbols[l]).collect()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, DecodeError> {
        text.chars()
            .map(|c| {
                self.symbols.iter().position(|&s| s == c).ok_or_else(|| DecodeError::Alphabet(format!("symbol {c:?} not in alphabet")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub beam_width: usize,
    /// Character-model weight.
    pub alpha: f64,
    /// Word-model weight.
    pub lambda: f64,
    /// Word insertion bonus.
    pub beta: f64,
    /// Frames between depth prunes; 0 disables them.
    pub prune_period: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_width: 128, alpha: 1.0, lambda: 1.0, beta: 0.0, prune_period: 100 }
    }
}

/// One decoded hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    /// ln of the blank + non-blank prefix probability, including character-model factors.
    pub log_prob: f64,
    /// Accumulated word-model score (ln domain).
    pub word_score: f64,
}

impl Hypothesis {
    pub fn score(&self) -> f64 {
        self.log_prob + self.word_score
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Shorter first, then lexicographic.
pub(crate) fn tie_break(a: &[usize], b: &[usize]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

pub(crate) fn check_posteriors(y: &[f64], alphabet: &Alphabet) -> Result<(), DecodeError> {
    if y.len() != alphabet.am_dim() {
        return Err(DecodeError::PosteriorLength { expected: alphabet.am_dim(), got: y.len() });
    }
    let sum: f64 = y.iter().sum();
    let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min >= 0.0 && (sum - 1.0).abs() <= 1e-6) {
        return Err(DecodeError::NotNormalized { sum, min });
    }
    Ok(())
}

type NodeId = u32;

#[derive(Debug)]
struct Node<C> {
    label: Option<usize>,
    parent: Option<NodeId>,
    children: Vec<(usize, NodeId)>,
    depth: u32,
    log_blank: f64,
    log_nonblank: f64,
    next_blank: f64,
    next_nonblank: f64,
    active: bool,
    context: Option<C>,
    word: String,
    history: WordHistory,
    word_score: f64,
}

impl<C> Node<C> {
    fn log_total(&self) -> f64 {
        log_add(self.log_blank, self.log_nonblank)
    }

    fn score(&self) -> f64 {
        self.log_total() + self.word_score
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DecoderStats {
    pub frames: u64,
    /// Sum over frames of live hypotheses after pruning.
    pub live_sum: u64,
    /// Hypotheses removed by width pruning.
    pub width_pruned: u64,
    pub depth_prunes: u64,
    pub emitted_labels: u64,
    pub peak_nodes: usize,
    pub peak_contexts: usize,
}

impl DecoderStats {
    pub fn mean_live(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.live_sum as f64 / self.frames as f64
        }
    }
}

/// Streaming beam-search decoder over per-frame posteriors.
pub struct Decoder<L: CharLm> {
    alphabet: Alphabet,
    cfg: BeamConfig,
    lm: L,
    words: Option<WordScorer>,
    nodes: Vec<Option<Node<L::Context>>>,
    free: Vec<NodeId>,
    root: NodeId,
    active: Vec<NodeId>,
    emitted: Vec<usize>,
    live_nodes: usize,
    live_contexts: usize,
    stats: DecoderStats,
}

impl<L: CharLm> Decoder<L> {
    pub fn new(alphabet: Alphabet, cfg: BeamConfig, mut lm: L, words: Option<WordScorer>) -> Result<Self, DecodeError> {
        if cfg.beam_width == 0 {
            return Err(DecodeError::Alphabet("beam width must be at least 1".into()));
        }
        let words = words.map(|mut w| {
            w.weight = cfg.lambda;
            w.bonus = cfg.beta;
            w
        });
        let history = words.as_ref().map(WordScorer::sentence_start).unwrap_or_default();
        let context = Some(lm.initial()?);
        let root = Node {
            label: None,
            parent: None,
            children: Vec::new(),
            depth: 0,
            log_blank: 0.0,
            log_nonblank: f64::NEG_INFINITY,
            next_blank: f64::NEG_INFINITY,
            next_nonblank: f64::NEG_INFINITY,
            active: true,
            context,
            word: String::new(),
            history,
            word_score: 0.0,
        };
        Ok(Self {
            alphabet,
            cfg,
            lm,
            words,
            nodes: vec![Some(root)],
            free: Vec::new(),
            root: 0,
            active: vec![0],
            emitted: Vec::new(),
            live_nodes: 1,
            live_contexts: 1,
            stats: DecoderStats { peak_nodes: 1, peak_contexts: 1, ..Default::default() },
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn config(&self) -> &BeamConfig {
        &self.cfg
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    pub fn char_lm(&self) -> &L {
        &self.lm
    }

    /// Labels already emitted by depth pruning; never revised.
    pub fn emitted(&self) -> &[usize] {
        &self.emitted
    }

    pub fn live_hypotheses(&self) -> usize {
        self.active.len()
    }

    pub fn live_contexts(&self) -> usize {
        self.live_contexts
    }

    fn node(&self, id: NodeId) -> &Node<L::Context> {
        self.nodes[id as usize].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node<L::Context> {
        self.nodes[id as usize].as_mut().expect("live node")
    }

    /// Labels from just below the root down to `id`.
    fn path(&self, mut id: NodeId) -> Vec<usize> {
        let mut out = Vec::new();
        while id != self.root {
            let n = self.node(id);
            out.push(n.label.expect("non-root node has a label"));
            id = n.parent.expect("non-root node has a parent");
        }
        out.reverse();
        out
    }

    fn alloc(&mut self, node: Node<L::Context>) -> NodeId {
        self.live_nodes += 1;
        self.stats.peak_nodes = self.stats.peak_nodes.max(self.live_nodes);
        match self.free.pop() {
            Some(id) => {
                self.nodes[id as usize] = Some(node);
                id
            }
            None => {
                self.nodes.push(Some(node));
                (self.nodes.len() - 1) as NodeId
            }
        }
    }

    fn drop_context(&mut self, id: NodeId) {
        if let Some(ctx) = self.node_mut(id).context.take() {
            self.lm.release(ctx);
            self.live_contexts -= 1;
        }
    }

    /// Frees `id` and any ancestors left without live descendants.
    fn collect(&mut self, mut id: NodeId) {
        loop {
            let n = self.node(id);
            if n.active || !n.children.is_empty() || id == self.root {
                return;
            }
            let parent = n.parent.expect("non-root node has a parent");
            self.drop_context(id);
            self.nodes[id as usize] = None;
            self.free.push(id);
            self.live_nodes -= 1;
            self.node_mut(parent).children.retain(|&(_, c)| c != id);
            id = parent;
        }
    }

    fn child(&mut self, parent: NodeId, label: usize) -> NodeId {
        if let Some(&(_, c)) = self.node(parent).children.iter().find(|(l, _)| *l == label) {
            return c;
        }
        let p = self.node(parent);
        let (mut word, mut history, mut word_score) = (String::new(), p.history, p.word_score);
        if let Some(scorer) = &self.words {
            if Some(label) == self.alphabet.delimiter {
                let r = scorer.rescore(&p.word, p.history);
                history = r.history;
                word_score += r.delta;
            } else if Some(label) == self.alphabet.eos {
                let r = scorer.end_sentence(&p.word, p.history);
                history = r.history;
                word_score += r.delta;
            } else {
                word = p.word.clone();
                word.push(self.alphabet.symbol(label));
            }
        }
        let depth = p.depth + 1;
        let id = self.alloc(Node {
            label: Some(label),
            parent: Some(parent),
            children: Vec::new(),
            depth,
            log_blank: f64::NEG_INFINITY,
            log_nonblank: f64::NEG_INFINITY,
            next_blank: f64::NEG_INFINITY,
            next_nonblank: f64::NEG_INFINITY,
            active: false,
            context: None,
            word,
            history,
            word_score,
        });
        self.node_mut(parent).children.push((label, id));
        id
    }

    /// Consumes one frame of posteriors over labels plus blank. Returns any
    /// labels newly emitted by a scheduled depth prune.
    pub fn step(&mut self, y: &[f64]) -> Result<Vec<usize>, DecodeError> {
        check_posteriors(y, &self.alphabet)?;
        let blank = self.alphabet.blank();
        let ln_y: Vec<f64> = y.iter().map(|&p| p.ln()).collect();
        let prev = std::mem::take(&mut self.active);
        let mut touched: Vec<NodeId> = Vec::with_capacity(prev.len() * self.alphabet.labels());

        for &id in &prev {
            let (label, pb, pnb) = {
                let n = self.node(id);
                (n.label, n.log_blank, n.log_nonblank)
            };
            let total = log_add(pb, pnb);
            let lm_scores: Option<Vec<f64>> = if self.cfg.alpha != 0.0 {
                let ctx = self.node(id).context.as_ref().expect("live hypothesis has a context");
                Some((0..self.alphabet.labels()).map(|k| self.cfg.alpha * self.lm.log_prob(ctx, k)).collect())
            } else {
                None
            };
            {
                let n = self.node_mut(id);
                n.next_blank = log_add(n.next_blank, total + ln_y[blank]);
                if let Some(last) = label {
                    n.next_nonblank = log_add(n.next_nonblank, pnb + ln_y[last]);
                }
            }
            touched.push(id);
            for k in 0..self.alphabet.labels() {
                if y[k] == 0.0 {
                    continue;
                }
                let base = if Some(k) == label { pb } else { total };
                if base == f64::NEG_INFINITY {
                    continue;
                }
                let lm = lm_scores.as_ref().map_or(0.0, |s| s[k]);
                let contribution = ln_y[k] + lm + base;
                let c = self.child(id, k);
                let n = self.node_mut(c);
                n.next_nonblank = log_add(n.next_nonblank, contribution);
                touched.push(c);
            }
        }

        for &id in &prev {
            self.node_mut(id).active = false;
        }
        for &id in &touched {
            let n = self.node_mut(id);
            if n.next_blank == f64::NEG_INFINITY && n.next_nonblank == f64::NEG_INFINITY {
                continue;
            }
            n.log_blank = std::mem::replace(&mut n.next_blank, f64::NEG_INFINITY);
            n.log_nonblank = std::mem::replace(&mut n.next_nonblank, f64::NEG_INFINITY);
            if !n.active {
                n.active = true;
                self.active.push(id);
            }
        }
        for &id in prev.iter().chain(&touched) {
            if self.nodes[id as usize].as_ref().is_some_and(|n| !n.active) {
                let n = self.node_mut(id);
                n.log_blank = f64::NEG_INFINITY;
                n.log_nonblank = f64::NEG_INFINITY;
            }
        }

        self.prune_width(self.cfg.beam_width);
        self.attach_contexts()?;
        for id in prev {
            if self.nodes[id as usize].as_ref().is_some_and(|n| !n.active) {
                self.drop_context(id);
                self.collect(id);
            }
        }

        self.stats.frames += 1;
        self.stats.live_sum += self.active.len() as u64;
        self.stats.peak_contexts = self.stats.peak_contexts.max(self.live_contexts);
        if self.active.is_empty() {
            return Err(DecodeError::Empty);
        }
        if self.cfg.prune_period > 0 && self.stats.frames % self.cfg.prune_period as u64 == 0 {
            return Ok(self.prune_depth());
        }
        Ok(Vec::new())
    }

    /// Runs the character model for live hypotheses that lack a context.
    fn attach_contexts(&mut self) -> Result<(), DecodeError> {
        for i in 0..self.active.len() {
            let id = self.active[i];
            if self.node(id).context.is_some() {
                continue;
            }
            let n = self.node(id);
            let (parent, label) = (n.parent.expect("root always has a context"), n.label.expect("labelled"));
            let ctx = {
                let pctx = self.nodes[parent as usize]
                    .as_ref()
                    .and_then(|n| n.context.as_ref())
                    .expect("extended hypothesis kept its context");
                self.lm.advance(pctx, label)?
            };
            self.node_mut(id).context = Some(ctx);
            self.live_contexts += 1;
        }
        Ok(())
    }

    fn rank(&self, a: NodeId, b: NodeId) -> Ordering {
        let (na, nb) = (self.node(a), self.node(b));
        nb.score()
            .partial_cmp(&na.score())
            .unwrap_or(Ordering::Equal)
            .then_with(|| na.depth.cmp(&nb.depth))
            .then_with(|| if a == b { Ordering::Equal } else { tie_break(&self.path(a), &self.path(b)) })
    }

    /// Keeps the `n` best live hypotheses and frees everything that no
    /// longer leads to one.
    pub fn prune_width(&mut self, n: usize) {
        let n = n.max(1);
        let mut ids = std::mem::take(&mut self.active);
        ids.sort_by(|&a, &b| self.rank(a, b));
        let dropped = if ids.len() > n { ids.split_off(n) } else { Vec::new() };
        self.stats.width_pruned += dropped.len() as u64;
        self.active = ids;
        for id in dropped {
            let node = self.node_mut(id);
            node.active = false;
            node.log_blank = f64::NEG_INFINITY;
            node.log_nonblank = f64::NEG_INFINITY;
            if self.node(id).children.is_empty() {
                self.collect(id);
            }
        }
    }

    /// Emits the deepest node shared by every live hypothesis and re-roots
    /// the tree there. Returns the newly emitted labels.
    pub fn prune_depth(&mut self) -> Vec<usize> {
        let Some(&first) = self.active.first() else {
            return Vec::new();
        };
        let mut lca = first;
        for &id in &self.active[1..] {
            let mut a = lca;
            let mut b = id;
            while self.node(a).depth > self.node(b).depth {
                a = self.node(a).parent.expect("below root");
            }
            while self.node(b).depth > self.node(a).depth {
                b = self.node(b).parent.expect("below root");
            }
            while a != b {
                a = self.node(a).parent.expect("below root");
                b = self.node(b).parent.expect("below root");
            }
            lca = a;
        }
        if lca == self.root {
            return Vec::new();
        }
        let fresh = self.path(lca);
        // everything above the new root lies on the single path to it
        let mut up = self.node(lca).parent;
        self.node_mut(lca).parent = None;
        while let Some(id) = up {
            up = self.node(id).parent;
            self.drop_context(id);
            self.nodes[id as usize] = None;
            self.free.push(id);
            self.live_nodes -= 1;
        }
        self.root = lca;
        self.emitted.extend_from_slice(&fresh);
        self.stats.depth_prunes += 1;
        self.stats.emitted_labels += fresh.len() as u64;
        fresh
    }

    /// Releases every context still held and hands back the character model.
    pub fn into_char_lm(mut self) -> L {
        for i in 0..self.nodes.len() {
            if self.nodes[i].is_some() {
                self.drop_context(i as NodeId);
            }
        }
        self.lm
    }

    fn hypothesis(&self, id: NodeId) -> Hypothesis {
        let n = self.node(id);
        let mut labels = self.emitted.clone();
        labels.extend(self.path(id));
        Hypothesis { labels, log_prob: n.log_total(), word_score: n.word_score }
    }

    /// Live hypotheses, best first.
    pub fn hypotheses(&self) -> Vec<Hypothesis> {
        let mut ids = self.active.clone();
        ids.sort_by(|&a, &b| self.rank(a, b));
        ids.into_iter().map(|id| self.hypothesis(id)).collect()
    }

    pub fn best_hypothesis(&self) -> Result<Hypothesis, DecodeError> {
        let best = self.active.iter().copied().min_by(|&a, &b| self.rank(a, b)).ok_or(DecodeError::Empty)?;
        Ok(self.hypothesis(best))
    }
}
