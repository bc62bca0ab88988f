//! Branch-probability configuration: a fill-in template keyed by the source
//! location of each conditional branch, and a parser for the completed file.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! T_<line>_<col> = <num>/<den> | <decimal>     # comment
//! ```
//!
//! The value is the probability that the branch condition evaluates false,
//! i.e. of the second label in `br i1 %c, label %T, label %F`. For a counted
//! loop running `N` iterations that is `1/(N+1)`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::cfg::Cfg;
use crate::ir::SourceLoc;
use crate::rational::{format_exact, parse_rational};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProbError {
    #[error("two conditional branches share source location ({line}, {col})")]
    DuplicateBranchLoc { line: u32, col: u32 },
    #[error("conditional branch in block `{0}` has no debug location")]
    UnlocatedBranch(String),
    #[error("bad probability for {key}: `{value}`")]
    BadProbability { key: String, value: String },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("line {line}: expected `T_<line>_<col> = <value>`, found `{text}`")]
    Syntax { line: usize, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProbKey {
    pub line: u32,
    pub col: u32,
}

impl ProbKey {
    pub fn new(line: u32, col: u32) -> Self {
        ProbKey { line, col }
    }

    pub fn loc(&self) -> SourceLoc {
        SourceLoc::new(self.line, self.col)
    }
}

impl From<SourceLoc> for ProbKey {
    fn from(loc: SourceLoc) -> Self {
        ProbKey::new(loc.line, loc.col)
    }
}

impl fmt::Display for ProbKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T_{}_{}", self.line, self.col)
    }
}

impl FromStr for ProbKey {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix("T_").ok_or(())?;
        let (line, col) = rest.split_once('_').ok_or(())?;
        let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
        if !digits(line) || !digits(col) {
            return Err(());
        }
        Ok(ProbKey::new(line.parse().map_err(|_| ())?, col.parse().map_err(|_| ())?))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbConfig {
    pub entries: BTreeMap<ProbKey, BigRational>,
}

impl ProbConfig {
    pub fn get(&self, key: ProbKey) -> Option<&BigRational> {
        self.entries.get(&key)
    }

    pub fn insert(&mut self, key: ProbKey, p: BigRational) {
        self.entries.insert(key, p);
    }

    /// Renders entries in key order as exact rationals; parses back equal.
    pub fn format(&self) -> String {
        let mut out = String::new();
        for (key, p) in &self.entries {
            let _ = writeln!(out, "{key} = {}", format_exact(p));
        }
        out
    }
}

/// Conditional branches of `cfg` as `(key, block, false target)`, sorted by key.
pub fn branch_keys(cfg: &Cfg) -> Result<Vec<(ProbKey, String, String)>, ProbError> {
    let mut keys: Vec<(ProbKey, String, String)> = Vec::new();
    for (block, false_target, loc) in cfg.conditional_branches() {
        if !loc.is_known() {
            return Err(ProbError::UnlocatedBranch(block.to_string()));
        }
        let key = ProbKey::from(loc);
        if keys.iter().any(|(k, _, _)| *k == key) {
            return Err(ProbError::DuplicateBranchLoc {
                line: key.line,
                col: key.col,
            });
        }
        keys.push((key, block.to_string(), false_target.to_string()));
    }
    keys.sort();
    Ok(keys)
}

pub fn emit_template(cfg: &Cfg) -> Result<String, ProbError> {
    let keys = branch_keys(cfg)?;
    let mut out = String::new();
    let _ = writeln!(out, "# Branch probabilities for function `{}`.", cfg.function);
    out.push_str("# Each key T_<line>_<col> is the source location of a conditional branch.\n");
    out.push_str("# Value: probability that the condition is false (the second `br` label);\n");
    out.push_str("# the true edge receives 1 - p. A loop running N iterations uses 1/(N+1).\n");
    for (key, block, target) in keys {
        let _ = writeln!(out, "{key} = <FILL>  # {block}: false-> {target}");
    }
    Ok(out)
}

pub fn parse_config(text: &str) -> Result<ProbConfig, ProbError> {
    let mut config = ProbConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key_text, value) = line.split_once('=').ok_or_else(|| ProbError::Syntax {
            line: idx + 1,
            text: raw.trim().to_string(),
        })?;
        let key_text = key_text.trim();
        let value = value.trim();
        let key: ProbKey = key_text.parse().map_err(|_| ProbError::Syntax {
            line: idx + 1,
            text: raw.trim().to_string(),
        })?;
        let p = parse_rational(value)
            .filter(|p| *p >= BigRational::zero() && *p <= BigRational::one())
            .ok_or_else(|| ProbError::BadProbability {
                key: key_text.to_string(),
                value: value.to_string(),
            })?;
        if config.entries.insert(key, p).is_some() {
            return Err(ProbError::DuplicateKey(key_text.to_string()));
        }
    }
    Ok(config)
}
