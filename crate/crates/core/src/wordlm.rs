//! ARPA back-off n-gram model (order ≤ 3) and on-the-fly word rescoring.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use thiserror::Error;

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";
pub const DEFAULT_FLOOR: f64 = -7.0;

#[derive(Debug, Error)]
pub enum ArpaError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: expected {expected} {order}-grams, found {found}")]
    Count { line: usize, order: usize, expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn syntax(line: usize, msg: impl Into<String>) -> ArpaError {
    ArpaError::Syntax { line, msg: msg.into() }
}

pub type WordId = u32;
const NO_WORD: WordId = WordId::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    /// log10 probability.
    pub log_prob: f64,
    /// log10 back-off weight.
    pub backoff: f64,
}

type Key = [WordId; 3];

fn key(ids: &[WordId]) -> Key {
    let mut k = [NO_WORD; 3];
    k[..ids.len()].copy_from_slice(ids);
    k
}

#[derive(Debug, Clone)]
pub struct ArpaModel {
    words: Vec<String>,
    vocab: HashMap<String, WordId>,
    /// `tables[n - 1]` holds the n-grams.
    tables: Vec<HashMap<Key, Entry>>,
    unk: Option<WordId>,
    floor: f64,
}

impl ArpaModel {
    pub fn order(&self) -> usize {
        self.tables.len()
    }

    pub fn count(&self, order: usize) -> usize {
        self.tables.get(order - 1).map_or(0, HashMap::len)
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.vocab.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Vocabulary in id order, for diagnostics.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn set_floor(&mut self, floor: f64) {
        self.floor = floor;
    }

    pub fn entry(&self, ngram: &[&str]) -> Option<Entry> {
        let ids = ngram.iter().map(|w| self.id(w)).collect::<Option<Vec<_>>>()?;
        self.entry_ids(&ids)
    }

    fn entry_ids(&self, ids: &[WordId]) -> Option<Entry> {
        if ids.is_empty() || ids.len() > self.order() || ids.contains(&NO_WORD) {
            return None;
        }
        self.tables[ids.len() - 1].get(&key(ids)).copied()
    }

    /// Maps a word to its id, the unknown entry, or the out-of-vocabulary marker.
    pub fn lookup(&self, word: &str) -> WordId {
        self.id(word).or(self.unk).unwrap_or(NO_WORD)
    }

    /// log10 P(word | history); `history` is oldest first, truncated to the model order.
    pub fn log_prob(&self, word: &str, history: &[&str]) -> f64 {
        let hist: Vec<WordId> = history.iter().map(|w| self.lookup(w)).collect();
        self.log_prob_ids(self.lookup(word), &hist)
    }

    pub fn log_prob_ids(&self, word: WordId, history: &[WordId]) -> f64 {
        let keep = history.len().min(self.order().saturating_sub(1));
        let mut hist = &history[history.len() - keep..];
        let mut backoff = 0.0;
        loop {
            let mut ngram = hist.to_vec();
            ngram.push(word);
            if let Some(e) = self.entry_ids(&ngram) {
                return backoff + e.log_prob;
            }
            if hist.is_empty() {
                return backoff + self.floor;
            }
            backoff += self.entry_ids(hist).map_or(0.0, |e| e.backoff);
            hist = &hist[1..];
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, ArpaError> {
        let file = std::fs::File::open(path)?;
        if path.extension().is_some_and(|e| e == "gz") {
            parse_arpa(BufReader::new(flate2::read::GzDecoder::new(file)))
        } else {
            parse_arpa(BufReader::new(file))
        }
    }

    /// Writes the model back in ARPA text form; entries within a section are sorted.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for n in 1..=self.order() {
            let _ = writeln!(out, "ngram {}={}", n, self.count(n));
        }
        for n in 1..=self.order() {
            let _ = write!(out, "\n\\{n}-grams:\n");
            let mut rows: Vec<(String, Entry)> = self.tables[n - 1]
                .iter()
                .map(|(k, e)| {
                    let words: Vec<&str> = k[..n].iter().map(|&id| self.words[id as usize].as_str()).collect();
                    (words.join(" "), *e)
                })
                .collect();
            rows.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, e) in rows {
                if n < self.order() && e.backoff != 0.0 {
                    let _ = writeln!(out, "{}\t{}\t{}", e.log_prob, words, e.backoff);
                } else {
                    let _ = writeln!(out, "{}\t{}", e.log_prob, words);
                }
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, ArpaError> {
    tok.parse::<f64>().map_err(|_| syntax(line, format!("not a number: {tok:?}")))
}

enum Section {
    Header,
    Grams(usize),
    Done,
}

pub fn parse_arpa<R: Read>(reader: BufReader<R>) -> Result<ArpaModel, ArpaError> {
    let mut declared: Vec<usize> = Vec::new();
    let mut words: Vec<String> = Vec::new();
    let mut vocab: HashMap<String, WordId> = HashMap::new();
    let mut tables: Vec<HashMap<Key, Entry>> = Vec::new();
    let mut section: Option<Section> = None;
    let mut line_no = 0;

    let close = |order: usize, tables: &[HashMap<Key, Entry>], declared: &[usize], line: usize| {
        let found = tables[order - 1].len();
        if found != declared[order - 1] {
            return Err(ArpaError::Count { line, order, expected: declared[order - 1], found });
        }
        Ok(())
    };

    for raw in reader.lines() {
        line_no += 1;
        let raw = raw?;
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        match &section {
            None => {
                if text == "\\data\\" {
                    section = Some(Section::Header);
                }
                // anything before \data\ is a free-form preamble
            }
            Some(Section::Header) => {
                if let Some(rest) = text.strip_prefix("ngram ") {
                    let (n, c) = rest.split_once('=').ok_or_else(|| syntax(line_no, "malformed ngram count"))?;
                    let n: usize = n.trim().parse().map_err(|_| syntax(line_no, "malformed ngram order"))?;
                    let c: usize = c.trim().parse().map_err(|_| syntax(line_no, "malformed ngram count"))?;
                    if n != declared.len() + 1 {
                        return Err(syntax(line_no, format!("ngram order {n} out of sequence")));
                    }
                    if n > 3 {
                        return Err(syntax(line_no, "orders above 3 are not supported"));
                    }
                    declared.push(c);
                    tables.push(HashMap::with_capacity(c));
                } else if text == "\\1-grams:" {
                    if declared.is_empty() {
                        return Err(syntax(line_no, "no ngram counts in header"));
                    }
                    section = Some(Section::Grams(1));
                } else {
                    return Err(syntax(line_no, format!("unexpected header line {text:?}")));
                }
            }
            Some(Section::Grams(order)) => {
                let order = *order;
                if text.starts_with('\\') {
                    close(order, &tables, &declared, line_no)?;
                    if text == "\\end\\" {
                        if order != declared.len() {
                            return Err(syntax(line_no, format!("missing \\{}-grams: section", order + 1)));
                        }
                        section = Some(Section::Done);
                    } else if text == format!("\\{}-grams:", order + 1) && order < declared.len() {
                        section = Some(Section::Grams(order + 1));
                    } else {
                        return Err(syntax(line_no, format!("unexpected section marker {text:?}")));
                    }
                    continue;
                }
                let toks: Vec<&str> = text.split_whitespace().collect();
                if toks.len() != order + 1 && toks.len() != order + 2 {
                    return Err(syntax(line_no, format!("expected {order}-gram entry")));
                }
                let log_prob = parse_f64(toks[0], line_no)?;
                if log_prob > 0.0 {
                    return Err(syntax(line_no, "positive log probability"));
                }
                let backoff = if toks.len() == order + 2 { parse_f64(toks[order + 1], line_no)? } else { 0.0 };
                let mut ids = Vec::with_capacity(order);
                for w in &toks[1..=order] {
                    let id = match vocab.get(*w) {
                        Some(&id) => id,
                        None if order == 1 => {
                            let id = words.len() as WordId;
                            words.push(w.to_string());
                            vocab.insert(w.to_string(), id);
                            id
                        }
                        None => return Err(syntax(line_no, format!("word {w:?} missing from unigrams"))),
                    };
                    ids.push(id);
                }
                if order > 1 && !tables[order - 2].contains_key(&key(&ids[..order - 1])) {
                    return Err(syntax(line_no, "history n-gram missing from lower order"));
                }
                if tables[order - 1].insert(key(&ids), Entry { log_prob, backoff }).is_some() {
                    return Err(syntax(line_no, "duplicate n-gram"));
                }
            }
            Some(Section::Done) => return Err(syntax(line_no, "content after \\end\\")),
        }
    }
    match section {
        Some(Section::Done) => {}
        None => return Err(syntax(line_no, "missing \\data\\ header")),
        Some(_) => return Err(syntax(line_no, "missing \\end\\")),
    }
    let unk = vocab.get(UNKNOWN).copied();
    Ok(ArpaModel { words, vocab, tables, unk, floor: DEFAULT_FLOOR })
}

pub fn parse_arpa_str(text: &str) -> Result<ArpaModel, ArpaError> {
    parse_arpa(BufReader::new(text.as_bytes()))
}

/// The last two completed words of a hypothesis, oldest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WordHistory {
    ids: [WordId; 2],
    len: u8,
}

impl WordHistory {
    pub fn as_slice(&self) -> &[WordId] {
        &self.ids[..self.len as usize]
    }

    pub fn push(&self, id: WordId) -> Self {
        match self.len {
            0 => Self { ids: [id, NO_WORD], len: 1 },
            1 => Self { ids: [self.ids[0], id], len: 2 },
            _ => Self { ids: [self.ids[1], id], len: 2 },
        }
    }
}

/// Weighted word-model scoring with an insertion bonus.
#[derive(Debug, Clone)]
pub struct WordScorer {
    pub model: std::sync::Arc<ArpaModel>,
    /// Weight applied to the word log-probability.
    pub weight: f64,
    /// Added per completed word.
    pub bonus: f64,
}

/// Result of rescoring one completed word.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rescore {
    /// Natural-log score delta.
    pub delta: f64,
    pub history: WordHistory,
}

impl WordScorer {
    pub fn new(model: std::sync::Arc<ArpaModel>, weight: f64, bonus: f64) -> Self {
        Self { model, weight, bonus }
    }

    /// History at the start of a sentence.
    pub fn sentence_start(&self) -> WordHistory {
        match self.model.id(SENTENCE_START) {
            Some(id) => WordHistory::default().push(id),
            None => WordHistory::default(),
        }
    }

    /// Score for `word` completed after `history`. An empty word leaves
    /// everything unchanged.
    pub fn rescore(&self, word: &str, history: WordHistory) -> Rescore {
        if word.is_empty() {
            return Rescore { delta: 0.0, history };
        }
        let id = self.model.lookup(word);
        let lp = self.model.log_prob_ids(id, history.as_slice());
        Rescore { delta: self.weight * lp * std::f64::consts::LN_10 + self.bonus, history: history.push(id) }
    }

    /// Scores the final word of a sentence plus the sentence-end token, and
    /// resets the history.
    pub fn end_sentence(&self, word: &str, history: WordHistory) -> Rescore {
        let r = self.rescore(word, history);
        let mut delta = r.delta;
        if let Some(end) = self.model.id(SENTENCE_END) {
            delta += self.weight * self.model.log_prob_ids(end, r.history.as_slice()) * std::f64::consts::LN_10;
        }
        Rescore { delta, history: self.sentence_start() }
    }
}
