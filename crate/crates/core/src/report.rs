//! Run reports as ordered `key=value` lines.
//!
//! Keys are dotted paths. A key `P.total` must equal the sum of its parts:
//! every `P.x` and every `P.x.total`, where `x` contains no dot. Values are
//! escaped so any string survives a write/parse round trip.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid key {0:?}")]
    Key(String),
    #[error("duplicate key {0}")]
    Duplicate(String),
    #[error("{key} = {total}, but its parts sum to {sum}")]
    Total { key: String, total: f64, sum: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.split('.').all(|seg| !seg.is_empty())
        && k.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn escape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(v: &str, line: usize) -> Result<String, ReportError> {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(ReportError::Syntax { line, msg: format!("bad escape {other:?}") }),
        }
    }
    Ok(out)
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> Result<(), ReportError> {
        let key = key.into();
        if !valid_key(&key) {
            return Err(ReportError::Key(key));
        }
        if self.get(&key).is_some() {
            return Err(ReportError::Duplicate(key));
        }
        self.entries.push((key, value.to_string()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys that are parts of `prefix.total`.
    pub fn parts(&self, prefix: &str) -> Vec<&str> {
        let head = format!("{prefix}.");
        self.entries
            .iter()
            .map(|(k, _)| k.as_str())
            .filter(|k| {
                let Some(rest) = k.strip_prefix(&head) else { return false };
                match rest.split_once('.') {
                    None => rest != "total",
                    Some((_, tail)) => tail == "total",
                }
            })
            .collect()
    }

    /// Checks every `*.total` against the sum of its parts.
    pub fn verify_totals(&self) -> Result<(), ReportError> {
        for (key, value) in &self.entries {
            let Some(prefix) = key.strip_suffix(".total") else { continue };
            let parts = self.parts(prefix);
            if parts.is_empty() {
                continue;
            }
            let total: f64 = value.parse().map_err(|_| ReportError::Key(key.clone()))?;
            let mut sum = 0.0;
            for p in parts {
                sum += self.get_f64(p).ok_or_else(|| ReportError::Key(p.to_string()))?;
            }
            if (sum - total).abs() > 1e-9 * total.abs().max(1.0) {
                return Err(ReportError::Total { key: key.clone(), total, sum });
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ReportError> {
        let mut r = Report::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ReportError::Syntax { line: i + 1, msg: "missing '='".into() })?;
            r.set(k, unescape(v, i + 1)?)?;
        }
        Ok(r)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={}", escape(v))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_lossless() {
        let mut r = Report::new();
        r.set("mode", "hwsim").unwrap();
        r.set("transcript", "A B\nC = D \\ e").unwrap();
        r.set("x.y", 0.1 + 0.2).unwrap();
        r.set("empty", "").unwrap();
        let back = Report::parse(&r.to_string()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get_f64("x.y"), Some(0.1 + 0.2));
    }

    #[test]
    fn totals_are_checked() {
        let mut r = Report::new();
        r.set("c.layer0.a", 2).unwrap();
        r.set("c.layer0.b", 3).unwrap();
        r.set("c.layer0.total", 5).unwrap();
        r.set("c.sync", 1).unwrap();
        r.set("c.total", 6).unwrap();
        assert_eq!(r.parts("c"), vec!["c.layer0.total", "c.sync"]);
        r.verify_totals().unwrap();
        r.set("d.a", 1).unwrap();
        r.set("d.total", 3).unwrap();
        assert!(matches!(r.verify_totals(), Err(ReportError::Total { .. })));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Report::parse("novalue\n").is_err());
        assert!(Report::parse("a=1\na=2\n").is_err());
        assert!(Report::parse("a..b=1\n").is_err());
        assert!(Report::parse("a=\\q\n").is_err());
        assert!(Report::new().set("sp ace", 1).is_err());
    }
}
