//! Maximum-probability path through a probability-annotated CFG, loop
//! annotation of that path, and its expansion into a bracketed static memory
//! trace such as
//!
//! ```text
//! retval → A → i → [100~i → i → i → result → ] → i
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::cfg::{AccessKind, AccessOp, Cfg, CfgEdge, IndexTerm, MemAccess, Polarity};
use crate::counts::ExecCounts;
use crate::loops::natural_loops;
use crate::rational::{format_sig, round, SIG_DIGITS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("edge {from} -> {to} has no probability attached")]
    UnlabeledEdge { from: String, to: String },
    #[error("function has no return block")]
    NoReturnBlock,
    #[error("block `{0}` has no successors and does not return")]
    DeadEnd(String),
    #[error("path did not reach a return block within {0} steps")]
    NonTerminating(usize),
    #[error("loop headed by `{0}` has no recognizable control variable")]
    MissingControlVar(String),
    #[error("loop headed by `{header}`: continue/exit ratio {ratio} is not a positive integer")]
    NonIntegralCount { header: String, ratio: String },
    #[error("loop headed by `{0}` has no exit edge with positive probability")]
    NoLoopExit(String),
    #[error("loop headed by `{header}`: path count {path_count} disagrees with solved counts ({solved})")]
    CountMismatch {
        header: String,
        path_count: u64,
        solved: String,
    },
    #[error("trace token {index} `{token}`: {reason}")]
    Syntax {
        index: usize,
        token: String,
        reason: String,
    },
    #[error("unbalanced loop brackets")]
    Unbalanced,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathItem {
    Block(String),
    Loop(LoopSegment),
}

/// `[count~control_var items... ]`; `items` begins with `header`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSegment {
    pub header: String,
    pub count: u64,
    pub control_var: Option<String>,
    pub items: Vec<PathItem>,
}

impl LoopSegment {
    fn blocks_into<'a>(&'a self, out: &mut Vec<&'a str>) {
        flatten_into(&self.items, out);
    }
}

fn flatten_into<'a>(items: &'a [PathItem], out: &mut Vec<&'a str>) {
    for item in items {
        match item {
            PathItem::Block(b) => out.push(b),
            PathItem::Loop(seg) => seg.blocks_into(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedPath {
    pub items: Vec<PathItem>,
}

impl AnnotatedPath {
    /// Block names in traversal order, brackets removed.
    pub fn blocks(&self) -> Vec<&str> {
        let mut out = Vec::new();
        flatten_into(&self.items, &mut out);
        out
    }

    pub fn loops(&self) -> Vec<&LoopSegment> {
        fn walk<'a>(items: &'a [PathItem], out: &mut Vec<&'a LoopSegment>) {
            for item in items {
                if let PathItem::Loop(seg) = item {
                    out.push(seg);
                    walk(&seg.items, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.items, &mut out);
        out
    }
}

impl fmt::Display for AnnotatedPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn parts(items: &[PathItem], out: &mut Vec<String>) {
            for item in items {
                match item {
                    PathItem::Block(b) => out.push(b.clone()),
                    PathItem::Loop(seg) => {
                        out.push(loop_start_text(seg.count, seg.control_var.as_deref(), true));
                        parts(&seg.items, out);
                        out.push("]".into());
                    }
                }
            }
        }
        let mut out = Vec::new();
        parts(&self.items, &mut out);
        f.write_str(&out.join(" → "))
    }
}

fn loop_start_text(count: u64, var: Option<&str>, with_var: bool) -> String {
    match var {
        Some(v) if with_var => format!("[{count}~{v}"),
        _ => format!("[{count}"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TraceToken {
    Access(MemAccess),
    LoopStart {
        count: u64,
        control_var: Option<String>,
    },
    LoopEnd,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotatedTrace {
    pub tokens: Vec<TraceToken>,
    /// Flattened block path the trace was expanded from; empty for parsed traces.
    pub block_path: Vec<String>,
}

impl AnnotatedTrace {
    pub fn new(tokens: Vec<TraceToken>) -> Result<Self, TraceError> {
        check_balance(&tokens)?;
        Ok(AnnotatedTrace {
            tokens,
            block_path: Vec::new(),
        })
    }

    /// Tokens joined by ` → `. With `with_vars` loop starts render as
    /// `[count~var`, otherwise as `[count`.
    pub fn render(&self, with_vars: bool) -> String {
        let parts: Vec<String> = self
            .tokens
            .iter()
            .map(|t| match t {
                TraceToken::Access(a) => a.render(),
                TraceToken::LoopStart { count, control_var } => {
                    loop_start_text(*count, control_var.as_deref(), with_vars)
                }
                TraceToken::LoopEnd => "]".into(),
            })
            .collect();
        parts.join(" → ")
    }

    pub fn access_count(&self) -> usize {
        self.tokens
            .iter()
            .filter(|t| matches!(t, TraceToken::Access(_)))
            .count()
    }

    pub fn max_depth(&self) -> usize {
        let mut depth = 0usize;
        let mut max = 0;
        for t in &self.tokens {
            match t {
                TraceToken::LoopStart { .. } => {
                    depth += 1;
                    max = max.max(depth);
                }
                TraceToken::LoopEnd => depth = depth.saturating_sub(1),
                TraceToken::Access(_) => {}
            }
        }
        max
    }

    /// Dynamic length: each access weighted by the product of the counts of
    /// its enclosing loops. `None` on overflow.
    pub fn unrolled_len(&self) -> Option<u64> {
        let mut stack: Vec<u64> = vec![1];
        let mut total: u64 = 0;
        for t in &self.tokens {
            match t {
                TraceToken::Access(_) => total = total.checked_add(*stack.last()?)?,
                TraceToken::LoopStart { count, .. } => {
                    let w = stack.last()?.checked_mul(*count)?;
                    stack.push(w);
                }
                TraceToken::LoopEnd => {
                    stack.pop();
                }
            }
        }
        Some(total)
    }

    /// The same trace with every loop count replaced by `0`; two traces that
    /// differ only in trip counts have equal shapes.
    pub fn shape(&self) -> Vec<TraceToken> {
        self.tokens
            .iter()
            .map(|t| match t {
                TraceToken::LoopStart { control_var, .. } => TraceToken::LoopStart {
                    count: 0,
                    control_var: control_var.clone(),
                },
                other => other.clone(),
            })
            .collect()
    }
}

impl fmt::Display for AnnotatedTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(true))
    }
}

fn check_balance(tokens: &[TraceToken]) -> Result<(), TraceError> {
    let mut depth = 0usize;
    for t in tokens {
        match t {
            TraceToken::LoopStart { .. } => depth += 1,
            TraceToken::LoopEnd => depth = depth.checked_sub(1).ok_or(TraceError::Unbalanced)?,
            TraceToken::Access(_) => {}
        }
    }
    if depth == 0 {
        Ok(())
    } else {
        Err(TraceError::Unbalanced)
    }
}

/// Parses the text form produced by [`AnnotatedTrace::render`]. Tokens may be
/// separated by `→`, `->` or whitespace. Accesses parse as 0-byte loads.
pub fn parse_trace(text: &str) -> Result<AnnotatedTrace, TraceError> {
    let normalized = text.replace('→', " ").replace("->", " ");
    let mut tokens = Vec::new();
    for (index, raw) in normalized.split_whitespace().enumerate() {
        let syntax = |reason: &str| TraceError::Syntax {
            index,
            token: raw.to_string(),
            reason: reason.to_string(),
        };
        if raw == "]" {
            tokens.push(TraceToken::LoopEnd);
        } else if let Some(rest) = raw.strip_prefix('[') {
            let (count, var) = match rest.split_once('~') {
                Some((c, v)) if !v.is_empty() => (c, Some(v.to_string())),
                Some(_) => return Err(syntax("empty control variable")),
                None => (rest, None),
            };
            let count: u64 = count.parse().map_err(|_| syntax("loop count is not an integer"))?;
            if count == 0 {
                return Err(syntax("loop count must be at least 1"));
            }
            tokens.push(TraceToken::LoopStart {
                count,
                control_var: var,
            });
        } else if raw.contains(['[', ']']) {
            return Err(syntax("stray bracket"));
        } else {
            tokens.push(TraceToken::Access(parse_access(raw).ok_or_else(|| syntax("bad access"))?));
        }
    }
    AnnotatedTrace::new(tokens)
}

fn parse_access(raw: &str) -> Option<MemAccess> {
    match raw.split_once('~') {
        None => Some(MemAccess::scalar(AccessOp::Load, raw, 0)),
        Some((sym, rest)) => {
            if sym.is_empty() || rest.is_empty() {
                return None;
            }
            let mut indices = Vec::new();
            for part in rest.split('-') {
                if part.is_empty() {
                    return None;
                }
                indices.push(match part.parse::<i64>() {
                    Ok(c) => IndexTerm::Const(c),
                    Err(_) => IndexTerm::Var(part.to_string()),
                });
            }
            Some(MemAccess {
                op_kind: AccessOp::Load,
                symbol: sym.to_string(),
                access_kind: AccessKind::Array {
                    base: sym.to_string(),
                    indices,
                },
                byte_width: 0,
            })
        }
    }
}

fn edge_prob(edge: &CfgEdge) -> Result<&BigRational, TraceError> {
    edge.prob.as_ref().ok_or_else(|| TraceError::UnlabeledEdge {
        from: edge.from.clone(),
        to: edge.to.clone(),
    })
}

/// Highest probability first; ties go CondTrue, CondFalse, Unconditional,
/// then by target name.
fn pick<'a>(candidates: impl Iterator<Item = (usize, &'a CfgEdge)>) -> Option<(usize, &'a CfgEdge)> {
    candidates.min_by(|(_, a), (_, b)| {
        b.prob
            .cmp(&a.prob)
            .then(a.polarity.cmp(&b.polarity))
            .then(a.to.cmp(&b.to))
    })
}

/// Walks from the entry along the most probable not-yet-taken edge until a
/// return block. Revisiting a block already on the (top-level) path closes a
/// loop: the segment from that block onward is bracketed and the block is
/// appended once more after the bracket, standing for the final exit check.
pub fn max_prob_path(cfg: &Cfg) -> Result<AnnotatedPath, TraceError> {
    for edge in &cfg.edges {
        edge_prob(edge)?;
    }
    if !cfg.nodes.values().any(|n| n.is_return) {
        return Err(TraceError::NoReturnBlock);
    }
    let limit = 10 * cfg.edges.len();
    let mut visited: HashSet<usize> = HashSet::new();
    let mut items = vec![PathItem::Block(cfg.entry.clone())];
    let mut cur = cfg.entry.clone();
    let mut steps = 0usize;
    while !cfg.nodes[cur.as_str()].is_return {
        steps += 1;
        if steps > limit {
            return Err(TraceError::NonTerminating(limit));
        }
        let out = || cfg.edges.iter().enumerate().filter(|(_, e)| e.from == cur);
        let (idx, edge) = pick(out().filter(|(i, _)| !visited.contains(i)))
            .or_else(|| pick(out()))
            .ok_or_else(|| TraceError::DeadEnd(cur.clone()))?;
        visited.insert(idx);
        let next = edge.to.clone();
        let revisit = items
            .iter()
            .rposition(|it| matches!(it, PathItem::Block(b) if *b == next));
        if let Some(k) = revisit {
            let group = items.split_off(k);
            let segment = close_loop(cfg, &next, &cur, group)?;
            items.push(PathItem::Loop(segment));
        }
        items.push(PathItem::Block(next.clone()));
        cur = next;
    }
    Ok(AnnotatedPath { items })
}

fn close_loop(cfg: &Cfg, header: &str, latch: &str, group: Vec<PathItem>) -> Result<LoopSegment, TraceError> {
    let mut flat = Vec::new();
    flatten_into(&group, &mut flat);
    let body: BTreeSet<String> = natural_loops(cfg)
        .into_iter()
        .find(|lp| lp.header == header && lp.latches.contains(latch))
        .map(|lp| lp.body)
        .unwrap_or_else(|| flat.iter().map(|b| b.to_string()).collect());

    let mut decision = None;
    for item in &group {
        let PathItem::Block(block) = item else { continue };
        let conds: Vec<&CfgEdge> = cfg
            .out_edges(block)
            .filter(|e| e.polarity != Polarity::Unconditional)
            .collect();
        if conds.len() != 2 {
            continue;
        }
        let inside: Vec<&&CfgEdge> = conds.iter().filter(|e| body.contains(&e.to)).collect();
        if inside.len() == 1 {
            let stay = inside[0];
            let exit = conds.iter().find(|e| !body.contains(&e.to)).expect("two targets");
            decision = Some((block.as_str(), edge_prob(stay)?, edge_prob(exit)?));
            break;
        }
    }
    let (decider, p_cont, p_exit) = decision.ok_or_else(|| TraceError::NoLoopExit(header.to_string()))?;
    if !p_exit.is_positive() {
        return Err(TraceError::NoLoopExit(header.to_string()));
    }
    let ratio = p_cont / p_exit;
    let count = nearest_count(&ratio).ok_or_else(|| TraceError::NonIntegralCount {
        header: header.to_string(),
        ratio: format_sig(&ratio, SIG_DIGITS),
    })?;
    let control_var = cfg.nodes[decider]
        .loop_control_var
        .clone()
        .ok_or_else(|| TraceError::MissingControlVar(header.to_string()))?;
    Ok(LoopSegment {
        header: header.to_string(),
        count,
        control_var: Some(control_var),
        items: group,
    })
}

/// `round(value)` when it is a positive integer within 1e-9 relative of
/// `value`.
fn nearest_count(value: &BigRational) -> Option<u64> {
    let n = round(value);
    let n_rat = BigRational::from_integer(n.clone());
    let tolerance = value.abs() / BigRational::from_integer(BigInt::from(1_000_000_000u64));
    if (value - &n_rat).abs() > tolerance {
        return None;
    }
    u64::try_from(n).ok().filter(|c| *c >= 1)
}

/// Replaces each block of `path` by its memory accesses, keeping loop
/// brackets in place.
pub fn expand_memory_trace(path: &AnnotatedPath, cfg: &Cfg) -> AnnotatedTrace {
    fn walk(items: &[PathItem], cfg: &Cfg, tokens: &mut Vec<TraceToken>) {
        for item in items {
            match item {
                PathItem::Block(b) => {
                    if let Some(node) = cfg.node(b) {
                        tokens.extend(node.accesses.iter().cloned().map(TraceToken::Access));
                    }
                }
                PathItem::Loop(seg) => {
                    tokens.push(TraceToken::LoopStart {
                        count: seg.count,
                        control_var: seg.control_var.clone(),
                    });
                    walk(&seg.items, cfg, tokens);
                    tokens.push(TraceToken::LoopEnd);
                }
            }
        }
    }
    let mut tokens = Vec::new();
    walk(&path.items, cfg, &mut tokens);
    AnnotatedTrace {
        tokens,
        block_path: path.blocks().into_iter().map(String::from).collect(),
    }
}

/// Checks every loop count on the path against the solved block counts:
/// a header entered `E` times from outside its loop and executed `N` times
/// in total runs `N / E - 1` iterations.
pub fn check_loop_counts(path: &AnnotatedPath, cfg: &Cfg, counts: &ExecCounts) -> Result<(), TraceError> {
    for seg in path.loops() {
        let mut flat = Vec::new();
        seg.blocks_into(&mut flat);
        let members: HashSet<&str> = flat.into_iter().collect();
        let entering: BigRational = cfg
            .in_edges(&seg.header)
            .filter(|e| !members.contains(e.from.as_str()))
            .map(|e| e.prob.clone().unwrap_or_default() * &counts.n[e.from.as_str()])
            .sum();
        let mismatch = |solved: String| TraceError::CountMismatch {
            header: seg.header.clone(),
            path_count: seg.count,
            solved,
        };
        if entering.is_zero() {
            return Err(mismatch("loop never entered".into()));
        }
        let iterations = &counts.n[seg.header.as_str()] / &entering - BigRational::from_integer(1.into());
        if nearest_count(&iterations) != Some(seg.count) {
            return Err(mismatch(format_sig(&iterations, SIG_DIGITS)));
        }
    }
    Ok(())
}
