//! Reuse-distance histograms and their prediction from a loop-annotated
//! static trace.
//!
//! [`calc_reuse_profile`] follows the recursive two-iteration scheme: every
//! loop is evaluated once for its first iteration (seeing the history before
//! the loop) and once more for its second iteration (seeing the prefix plus a
//! copy of the loop body). Iterations three to `count` repeat the second
//! iteration's distances, so that profile is weighted by `count - 1`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::cfg::MemAccess;
use crate::rational::{format_sig, SIG_DIGITS};
use crate::trace::{AnnotatedTrace, TraceToken};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReuseError {
    #[error("unbalanced loop brackets")]
    UnbalancedTrace,
    #[error("weighted access count exceeds 2^64")]
    Overflow,
    #[error("profile line {line}: {reason}")]
    BadProfile { line: usize, reason: String },
}

/// Histogram of reuse distances. `hist[d]` counts accesses with `d` distinct
/// other addresses since the previous access to the same address;
/// `inf_count` counts first accesses.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReuseProfile {
    pub hist: BTreeMap<u64, u64>,
    pub inf_count: u64,
}

impl ReuseProfile {
    pub fn total(&self) -> u64 {
        self.hist.values().fold(self.inf_count, |a, b| a.saturating_add(*b))
    }

    pub fn record(&mut self, distance: Option<u64>) {
        match distance {
            Some(d) => *self.hist.entry(d).or_insert(0) += 1,
            None => self.inf_count += 1,
        }
    }

    pub fn add(&mut self, distance: Option<u64>, count: u64) {
        if count == 0 {
            return;
        }
        match distance {
            Some(d) => {
                let slot = self.hist.entry(d).or_insert(0);
                *slot = slot.saturating_add(count);
            }
            None => self.inf_count = self.inf_count.saturating_add(count),
        }
    }

    pub fn get(&self, distance: Option<u64>) -> u64 {
        match distance {
            Some(d) => self.hist.get(&d).copied().unwrap_or(0),
            None => self.inf_count,
        }
    }

    /// `count / total` for a bucket; zero for an empty profile.
    pub fn probability(&self, distance: Option<u64>) -> BigRational {
        let total = self.total();
        if total == 0 {
            return BigRational::zero();
        }
        BigRational::new(BigInt::from(self.get(distance)), BigInt::from(total))
    }

    /// Buckets in output order: finite distances ascending, then infinity.
    pub fn buckets(&self) -> impl Iterator<Item = (Option<u64>, u64)> + '_ {
        self.hist
            .iter()
            .map(|(d, c)| (Some(*d), *c))
            .chain(std::iter::once((None, self.inf_count)))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,count,probability\n");
        for (d, c) in self.buckets() {
            let label = d.map_or_else(|| "inf".to_string(), |d| d.to_string());
            let _ = writeln!(out, "{label},{c},{}", format_sig(&self.probability(d), SIG_DIGITS));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let hist: Vec<Value> = self
            .hist
            .iter()
            .map(|(d, c)| {
                json!({
                    "distance": d,
                    "count": c,
                    "probability": format_sig(&self.probability(Some(*d)), SIG_DIGITS),
                })
            })
            .collect();
        json!({
            "total": self.total(),
            "inf": {
                "count": self.inf_count,
                "probability": format_sig(&self.probability(None), SIG_DIGITS),
            },
            "hist": hist,
        })
    }

    /// Reads either output format; probabilities are ignored.
    pub fn parse(text: &str) -> Result<ReuseProfile, ReuseError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            Self::parse_json(trimmed)
        } else {
            Self::parse_csv(text)
        }
    }

    fn parse_csv(text: &str) -> Result<ReuseProfile, ReuseError> {
        let mut profile = ReuseProfile::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("distance")) {
                continue;
            }
            let bad = |reason: &str| ReuseError::BadProfile {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let mut cols = line.split(',');
            let dist = cols.next().ok_or_else(|| bad("missing distance"))?.trim();
            let count: u64 = cols
                .next()
                .ok_or_else(|| bad("missing count"))?
                .trim()
                .parse()
                .map_err(|_| bad("count is not a nonnegative integer"))?;
            let distance = if dist == "inf" {
                None
            } else {
                Some(dist.parse().map_err(|_| bad("distance is not an integer or `inf`"))?)
            };
            profile.add(distance, count);
        }
        Ok(profile)
    }

    fn parse_json(text: &str) -> Result<ReuseProfile, ReuseError> {
        let bad = |reason: &str| ReuseError::BadProfile {
            line: 1,
            reason: reason.to_string(),
        };
        let value: Value = serde_json::from_str(text).map_err(|e| bad(&e.to_string()))?;
        let mut profile = ReuseProfile {
            inf_count: value["inf"]["count"].as_u64().ok_or_else(|| bad("missing inf.count"))?,
            ..Default::default()
        };
        for entry in value["hist"].as_array().ok_or_else(|| bad("missing hist"))? {
            let d = entry["distance"].as_u64().ok_or_else(|| bad("bad distance"))?;
            let c = entry["count"].as_u64().ok_or_else(|| bad("bad count"))?;
            profile.add(Some(d), c);
        }
        Ok(profile)
    }
}

/// `base + multiplier * other`, bucket by bucket.
pub fn merge_profiles(base: &ReuseProfile, other: &ReuseProfile, multiplier: u64) -> ReuseProfile {
    let mut out = base.clone();
    merge_into(&mut out, other, multiplier);
    out
}

fn merge_into(base: &mut ReuseProfile, other: &ReuseProfile, multiplier: u64) {
    if multiplier == 0 {
        return;
    }
    for (d, c) in other.buckets() {
        base.add(d, c.saturating_mul(multiplier));
    }
}

/// An access as the reuse computation sees it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EffectiveToken {
    /// Same location on every execution; keyed by its rendered text.
    Sym(String),
    /// A location never touched before, on every execution.
    Fresh,
    Open(u64),
    Close,
}

/// An array access whose subscripts mention the control variable of an
/// enclosing loop touches a new element each iteration (`Fresh`). Otherwise
/// the subscripts are constant or loop-invariant and it behaves as a scalar
/// keyed by its rendered text.
pub fn classify_array_access(access: &MemAccess, enclosing_loops: &[&str]) -> EffectiveToken {
    let varies = access.index_vars().iter().any(|v| enclosing_loops.contains(v));
    if access.is_array() && varies {
        EffectiveToken::Fresh
    } else {
        EffectiveToken::Sym(access.render())
    }
}

pub fn effective_tokens(trace: &AnnotatedTrace) -> Result<Vec<EffectiveToken>, ReuseError> {
    let mut vars: Vec<Option<&str>> = Vec::new();
    let mut out = Vec::with_capacity(trace.tokens.len());
    let mut warned = std::collections::HashSet::new();
    for token in &trace.tokens {
        out.push(match token {
            TraceToken::Access(access) => {
                let enclosing: Vec<&str> = vars.iter().flatten().copied().collect();
                let effective = classify_array_access(access, &enclosing);
                let mixed = access.index_vars().iter().any(|v| !enclosing.contains(v));
                if effective == EffectiveToken::Fresh && mixed && warned.insert(access.render()) {
                    log::warn!(
                        "`{}` mixes loop and non-loop subscripts; treated as a new element per access",
                        access.render()
                    );
                }
                effective
            }
            TraceToken::LoopStart { count, control_var } => {
                vars.push(control_var.as_deref());
                EffectiveToken::Open(*count)
            }
            TraceToken::LoopEnd => {
                vars.pop().ok_or(ReuseError::UnbalancedTrace)?;
                EffectiveToken::Close
            }
        });
    }
    if !vars.is_empty() {
        return Err(ReuseError::UnbalancedTrace);
    }
    Ok(out)
}

/// Interned token for the recursive scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok {
    Sym(u32),
    Fresh,
    Open(u64),
    Close,
}

pub fn calc_reuse_profile(trace: &AnnotatedTrace) -> Result<ReuseProfile, ReuseError> {
    trace.unrolled_len().ok_or(ReuseError::Overflow)?;
    calc_reuse_profile_effective(&effective_tokens(trace)?)
}

pub fn calc_reuse_profile_effective(tokens: &[EffectiveToken]) -> Result<ReuseProfile, ReuseError> {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut toks = Vec::with_capacity(tokens.len());
    let mut depth = 0usize;
    for t in tokens {
        toks.push(match t {
            EffectiveToken::Sym(s) => {
                let next = ids.len() as u32;
                Tok::Sym(*ids.entry(s.as_str()).or_insert(next))
            }
            EffectiveToken::Fresh => Tok::Fresh,
            EffectiveToken::Open(c) => {
                depth += 1;
                Tok::Open(*c)
            }
            EffectiveToken::Close => {
                depth = depth.checked_sub(1).ok_or(ReuseError::UnbalancedTrace)?;
                Tok::Close
            }
        });
    }
    if depth != 0 {
        return Err(ReuseError::UnbalancedTrace);
    }
    let mut scan = Scanner {
        seen: vec![0; ids.len()],
        stamp: 0,
    };
    let (_, profile) = scan.rec(0, &toks);
    Ok(profile)
}

struct Scanner {
    seen: Vec<u64>,
    stamp: u64,
}

impl Scanner {
    /// Processes `trace` from `idx` until the matching `]` or the end;
    /// returns the index reached and the profile of the accesses visited.
    fn rec(&mut self, mut idx: usize, trace: &[Tok]) -> (usize, ReuseProfile) {
        let mut profile = ReuseProfile::default();
        while idx < trace.len() {
            match trace[idx] {
                Tok::Open(count) => {
                    let (nxt, first) = self.rec(idx + 1, trace);
                    merge_into(&mut profile, &first, 1);
                    if count > 1 {
                        let mut history = Vec::with_capacity(nxt + (nxt - idx - 1));
                        history.extend_from_slice(&trace[..nxt]);
                        history.extend_from_slice(&trace[idx + 1..nxt]);
                        let (_, rest) = self.rec(nxt, &history);
                        merge_into(&mut profile, &rest, count - 1);
                    }
                    idx = nxt;
                }
                Tok::Close => return (idx, profile),
                Tok::Sym(s) => profile.record(self.distance(s, &trace[..idx])),
                Tok::Fresh => profile.record(None),
            }
            idx += 1;
        }
        (idx, profile)
    }

    /// Distinct addresses between the last occurrence of `sym` in `window`
    /// and its end; brackets are skipped and each fresh access counts once.
    fn distance(&mut self, sym: u32, window: &[Tok]) -> Option<u64> {
        self.stamp += 1;
        let mut distinct = 0u64;
        for tok in window.iter().rev() {
            match *tok {
                Tok::Sym(s) if s == sym => return Some(distinct),
                Tok::Sym(s) => {
                    if self.seen[s as usize] != self.stamp {
                        self.seen[s as usize] = self.stamp;
                        distinct += 1;
                    }
                }
                Tok::Fresh => distinct += 1,
                Tok::Open(_) | Tok::Close => {}
            }
        }
        None
    }
}

/// Differences between two profiles, compared as probability distributions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileComparison {
    /// Largest `|P_a(d) - P_b(d)|` over all buckets.
    pub max_abs_error: BigRational,
    /// Half the sum of `|P_a(d) - P_b(d)|`.
    pub tv_distance: BigRational,
    /// Every bucket count equal.
    pub counts_equal: bool,
    pub total_a: u64,
    pub total_b: u64,
}

pub fn compare_profiles(a: &ReuseProfile, b: &ReuseProfile) -> ProfileComparison {
    let mut keys: Vec<Option<u64>> = a.hist.keys().chain(b.hist.keys()).map(|d| Some(*d)).collect();
    keys.sort();
    keys.dedup();
    keys.push(None);
    let mut max = BigRational::zero();
    let mut sum = BigRational::zero();
    for d in keys {
        let diff = (a.probability(d) - b.probability(d)).abs();
        if diff > max {
            max = diff.clone();
        }
        sum += diff;
    }
    let strip = |p: &ReuseProfile| -> BTreeMap<u64, u64> {
        p.hist.iter().filter(|(_, c)| **c > 0).map(|(d, c)| (*d, *c)).collect()
    };
    ProfileComparison {
        max_abs_error: max,
        tv_distance: sum / BigRational::from_integer(2.into()),
        counts_equal: strip(a) == strip(b) && a.inf_count == b.inf_count,
        total_a: a.total(),
        total_b: b.total(),
    }
}

impl ProfileComparison {
    pub fn to_text(&self) -> String {
        format!(
            "total_a: {}\ntotal_b: {}\ncounts_equal: {}\nmax_abs_bucket_error: {}\ntv_distance: {}\n",
            self.total_a,
            self.total_b,
            self.counts_equal,
            format_sig(&self.max_abs_error, SIG_DIGITS),
            format_sig(&self.tv_distance, SIG_DIGITS),
        )
    }

    pub fn to_json(&self) -> Value {
        json!({
            "total_a": self.total_a,
            "total_b": self.total_b,
            "counts_equal": self.counts_equal,
            "max_abs_bucket_error": format_sig(&self.max_abs_error, SIG_DIGITS),
            "tv_distance": format_sig(&self.tv_distance, SIG_DIGITS),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;

    fn profile(pairs: &[(Option<u64>, u64)]) -> ReuseProfile {
        let mut p = ReuseProfile::default();
        for (d, c) in pairs {
            p.add(*d, *c);
        }
        p
    }

    fn calc(text: &str) -> ReuseProfile {
        calc_reuse_profile(&parse_trace(text).unwrap()).unwrap()
    }

    #[test]
    fn straight_line() {
        assert_eq!(calc("a b a"), profile(&[(None, 2), (Some(1), 1)]));
    }

    #[test]
    fn simple_loop() {
        assert_eq!(calc("x [2 y x ]"), profile(&[(None, 2), (Some(1), 3)]));
    }

    #[test]
    fn single_iteration_loop_ignores_second_pass() {
        assert_eq!(calc("x [1 y x ]"), profile(&[(None, 2), (Some(1), 1)]));
    }

    #[test]
    fn merge_examples() {
        let empty = ReuseProfile::default();
        assert_eq!(merge_profiles(&empty, &profile(&[(Some(1), 2)]), 3), profile(&[(Some(1), 6)]));
        let p = profile(&[(None, 1), (Some(4), 2)]);
        assert_eq!(merge_profiles(&p, &profile(&[(Some(9), 9)]), 0), p);
        assert_eq!(
            merge_profiles(&profile(&[(None, 1)]), &profile(&[(None, 1), (Some(1), 2)]), 199),
            profile(&[(None, 200), (Some(1), 398)])
        );
    }

    #[test]
    fn classification() {
        let t = parse_trace("arr~i-j arr~5 arr~m").unwrap();
        let acc: Vec<&MemAccess> = t
            .tokens
            .iter()
            .map(|t| match t {
                TraceToken::Access(a) => a,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(classify_array_access(acc[0], &["i", "j"]), EffectiveToken::Fresh);
        assert_eq!(classify_array_access(acc[0], &["k"]), EffectiveToken::Sym("arr~i-j".into()));
        assert_eq!(classify_array_access(acc[1], &["i"]), EffectiveToken::Sym("arr~5".into()));
        assert_eq!(classify_array_access(acc[2], &["k"]), EffectiveToken::Sym("arr~m".into()));
    }

    #[test]
    fn fresh_accesses_widen_windows() {
        // x a@0 x a@1 x: every x reuse sees one distinct element in between.
        assert_eq!(calc("x [2~i a~i x ]"), profile(&[(None, 3), (Some(1), 2)]));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let p = profile(&[(None, 3), (Some(0), 2), (Some(7), 1)]);
        assert_eq!(ReuseProfile::parse(&p.to_csv()).unwrap(), p);
        assert_eq!(ReuseProfile::parse(&p.to_json().to_string()).unwrap(), p);
        assert!(p.to_csv().ends_with("inf,3,0.500000000000\n"));
    }

    #[test]
    fn comparison() {
        let a = profile(&[(None, 1), (Some(1), 1)]);
        let b = profile(&[(None, 2), (Some(1), 2)]);
        let c = compare_profiles(&a, &b);
        assert!(c.tv_distance.is_zero());
        assert!(!c.counts_equal);
        let d = profile(&[(None, 2)]);
        let c = compare_profiles(&a, &d);
        assert_eq!(c.tv_distance, BigRational::new(1.into(), 2.into()));
        assert_eq!(c.max_abs_error, BigRational::new(1.into(), 2.into()));
    }

    #[test]
    fn unbalanced_effective_tokens() {
        assert_eq!(
            calc_reuse_profile_effective(&[EffectiveToken::Open(2)]),
            Err(ReuseError::UnbalancedTrace)
        );
    }
}
