//! Ground truth for the static predictions: dynamic address streams obtained
//! by fully unrolling an annotated trace (or by interpreting the CFG with
//! concrete loop bounds), and their exact reuse-distance histograms.
//!
//! Addresses are abstract: one per scalar symbol and one per materialized
//! array element `base@i,j`.

pub mod interp;
pub mod stack;

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::cfg::{AccessKind, IndexTerm, MemAccess};
use crate::reuse::ReuseProfile;
use crate::trace::{AnnotatedTrace, TraceToken};

pub use interp::{interpret_counts, interpret_profile, interpret_trace, InterpResult, LoopBounds};
pub use stack::{exact_reuse_profile, naive_reuse_profile, parallel_reuse_profile, StackDistanceTracker};

pub const DEFAULT_UNROLL_CAP: u64 = 100_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("dynamic trace would hold {length} addresses, above the cap of {cap}")]
    Overflow { length: String, cap: u64 },
    #[error("unbalanced loop brackets")]
    Unbalanced,
    #[error("bad loop override `{0}`")]
    BadOverride(String),
    #[error("loop override `{0}` names no loop in the trace")]
    UnknownLoop(String),
    #[error("execution did not finish within {0} block executions")]
    NonTerminating(u64),
    #[error("branch {key}: continue/exit ratio {ratio} is not a whole number of iterations")]
    NonIntegralBound { key: String, ratio: String },
    #[error("edge {from} -> {to} has no probability attached")]
    UnlabeledEdge { from: String, to: String },
    #[error("block `{0}` has no successors and does not return")]
    DeadEnd(String),
    #[error("dynamic trace line {line}: {reason}")]
    BadTrace { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexValue {
    Int(i64),
    Sym(String),
}

impl fmt::Display for IndexValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexValue::Int(v) => write!(f, "{v}"),
            IndexValue::Sym(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AddressKey {
    Scalar(String),
    Element(String, Vec<IndexValue>),
}

impl fmt::Display for AddressKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddressKey::Scalar(s) => f.write_str(s),
            AddressKey::Element(base, idx) => {
                let parts: Vec<String> = idx.iter().map(IndexValue::to_string).collect();
                write!(f, "{base}@{}", parts.join(","))
            }
        }
    }
}

impl AddressKey {
    pub fn parse(text: &str) -> Option<AddressKey> {
        let text = text.trim();
        if text.is_empty() || text.contains(char::is_whitespace) {
            return None;
        }
        Some(match text.split_once('@') {
            None => AddressKey::Scalar(text.to_string()),
            Some((base, rest)) => {
                if base.is_empty() || rest.is_empty() {
                    return None;
                }
                let idx = rest
                    .split(',')
                    .map(|p| match p.parse::<i64>() {
                        Ok(v) => IndexValue::Int(v),
                        Err(_) => IndexValue::Sym(p.to_string()),
                    })
                    .collect();
                AddressKey::Element(base.to_string(), idx)
            }
        })
    }
}

/// Dense ids for addresses, in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct AddressInterner {
    ids: HashMap<AddressKey, u32>,
    keys: Vec<AddressKey>,
}

impl AddressInterner {
    pub fn intern(&mut self, key: AddressKey) -> u32 {
        if let Some(id) = self.ids.get(&key) {
            return *id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.clone());
        self.ids.insert(key, id);
        id
    }

    pub fn key(&self, id: u32) -> &AddressKey {
        &self.keys[id as usize]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct DynamicTrace {
    pub addresses: Vec<u32>,
    pub interner: AddressInterner,
}

impl DynamicTrace {
    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn rendered(&self) -> Vec<String> {
        self.addresses.iter().map(|a| self.interner.key(*a).to_string()).collect()
    }

    /// One address per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.addresses {
            let _ = writeln!(out, "{}", self.interner.key(*a));
        }
        out
    }

    /// Reads one address per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<DynamicTrace, OracleError> {
        let mut trace = DynamicTrace::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let key = AddressKey::parse(line).ok_or_else(|| OracleError::BadTrace {
                line: idx + 1,
                reason: format!("bad address `{line}`"),
            })?;
            let id = trace.interner.intern(key);
            trace.addresses.push(id);
        }
        Ok(trace)
    }
}

/// Loop trip-count overrides keyed by nesting path: the first top-level loop
/// is `0`, the second loop nested directly in it is `0.1`, and so on.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopOverrides(pub BTreeMap<String, u64>);

impl LoopOverrides {
    /// Parses `path=count,path=count`.
    pub fn parse(text: &str) -> Result<LoopOverrides, OracleError> {
        let mut map = BTreeMap::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || OracleError::BadOverride(part.to_string());
            let (path, count) = part.split_once('=').ok_or_else(bad)?;
            let path = path.trim();
            let valid_path = !path.is_empty()
                && path.split('.').all(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
            let count: u64 = count.trim().parse().map_err(|_| bad())?;
            if !valid_path || count == 0 {
                return Err(bad());
            }
            map.insert(path.to_string(), count);
        }
        Ok(LoopOverrides(map))
    }
}

/// The nesting path of every loop start token, by token index.
fn loop_paths(trace: &AnnotatedTrace) -> Result<BTreeMap<usize, String>, OracleError> {
    let mut out = BTreeMap::new();
    let mut stack: Vec<(String, usize)> = Vec::new();
    let mut top_children = 0usize;
    for (i, t) in trace.tokens.iter().enumerate() {
        match t {
            TraceToken::LoopStart { .. } => {
                let path = match stack.last_mut() {
                    Some((parent, children)) => {
                        *children += 1;
                        format!("{parent}.{}", *children - 1)
                    }
                    None => {
                        top_children += 1;
                        (top_children - 1).to_string()
                    }
                };
                out.insert(i, path.clone());
                stack.push((path, 0));
            }
            TraceToken::LoopEnd => {
                stack.pop().ok_or(OracleError::Unbalanced)?;
            }
            TraceToken::Access(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(OracleError::Unbalanced);
    }
    Ok(out)
}

/// The trace with overridden loop counts substituted.
pub fn apply_overrides(trace: &AnnotatedTrace, overrides: &LoopOverrides) -> Result<AnnotatedTrace, OracleError> {
    let paths = loop_paths(trace)?;
    let known: std::collections::HashSet<&str> = paths.values().map(String::as_str).collect();
    if let Some(missing) = overrides.0.keys().find(|k| !known.contains(k.as_str())) {
        return Err(OracleError::UnknownLoop(missing.clone()));
    }
    let mut out = trace.clone();
    for (i, path) in paths {
        if let (Some(count), TraceToken::LoopStart { count: c, .. }) = (overrides.0.get(&path), &mut out.tokens[i]) {
            *c = *count;
        }
    }
    Ok(out)
}

enum Term {
    Const(i64),
    Bound(usize, String),
    Free(String),
}

enum Node {
    Fixed(u32),
    Element(String, Vec<Term>),
    Loop {
        count: u64,
        slot: Option<usize>,
        body: Vec<Node>,
    },
}

/// Resolves array subscripts against current control-variable values.
pub(crate) struct Materializer {
    slots: HashMap<String, usize>,
    values: Vec<Option<i64>>,
}

impl Materializer {
    pub(crate) fn new<'a>(vars: impl IntoIterator<Item = &'a str>) -> Self {
        let mut slots = HashMap::new();
        for v in vars {
            let next = slots.len();
            slots.entry(v.to_string()).or_insert(next);
        }
        let values = vec![None; slots.len()];
        Materializer { slots, values }
    }

    pub(crate) fn slot(&self, var: &str) -> Option<usize> {
        self.slots.get(var).copied()
    }

    pub(crate) fn set(&mut self, slot: usize, value: i64) {
        self.values[slot] = Some(value);
    }

    fn compile(&self, access: &MemAccess, interner: &mut AddressInterner) -> Node {
        match &access.access_kind {
            AccessKind::Scalar => Node::Fixed(interner.intern(AddressKey::Scalar(access.symbol.clone()))),
            AccessKind::Array { indices, .. } => {
                let terms = indices
                    .iter()
                    .map(|t| match t {
                        IndexTerm::Const(c) => Term::Const(*c),
                        IndexTerm::Var(v) => match self.slot(v) {
                            Some(s) => Term::Bound(s, v.clone()),
                            None => Term::Free(v.clone()),
                        },
                    })
                    .collect();
                Node::Element(access.symbol.clone(), terms)
            }
        }
    }

    fn resolve(&self, base: &str, terms: &[Term], interner: &mut AddressInterner) -> u32 {
        let idx = terms
            .iter()
            .map(|t| match t {
                Term::Const(c) => IndexValue::Int(*c),
                Term::Bound(slot, name) => match self.values[*slot] {
                    Some(v) => IndexValue::Int(v),
                    None => IndexValue::Sym(name.clone()),
                },
                Term::Free(name) => IndexValue::Sym(name.clone()),
            })
            .collect();
        interner.intern(AddressKey::Element(base.to_string(), idx))
    }
}

/// Compiled form of a single memory access for repeated materialization.
pub(crate) struct CompiledAccess(Node);

impl CompiledAccess {
    pub(crate) fn new(access: &MemAccess, mat: &Materializer, interner: &mut AddressInterner) -> Self {
        CompiledAccess(mat.compile(access, interner))
    }

    pub(crate) fn address(&self, mat: &Materializer, interner: &mut AddressInterner) -> u32 {
        match &self.0 {
            Node::Fixed(id) => *id,
            Node::Element(base, terms) => mat.resolve(base, terms, interner),
            Node::Loop { .. } => unreachable!("accesses compile to leaves"),
        }
    }
}

fn build(tokens: &[TraceToken], pos: &mut usize, mat: &Materializer, interner: &mut AddressInterner) -> Vec<Node> {
    let mut nodes = Vec::new();
    while *pos < tokens.len() {
        let t = &tokens[*pos];
        *pos += 1;
        match t {
            TraceToken::Access(a) => nodes.push(mat.compile(a, interner)),
            TraceToken::LoopStart { count, control_var } => {
                let body = build(tokens, pos, mat, interner);
                nodes.push(Node::Loop {
                    count: *count,
                    slot: control_var.as_deref().and_then(|v| mat.slot(v)),
                    body,
                });
            }
            TraceToken::LoopEnd => break,
        }
    }
    nodes
}

fn run(nodes: &[Node], mat: &mut Materializer, interner: &mut AddressInterner, sink: &mut dyn FnMut(u32)) {
    for node in nodes {
        match node {
            Node::Fixed(id) => sink(*id),
            Node::Element(base, terms) => sink(mat.resolve(base, terms, interner)),
            Node::Loop { count, slot, body } => {
                for c in 0..*count {
                    if let Some(s) = slot {
                        mat.set(*s, c as i64);
                    }
                    run(body, mat, interner, sink);
                }
                if let Some(s) = slot {
                    mat.set(*s, *count as i64);
                }
            }
        }
    }
}

/// Streams the unrolled address sequence of `trace` (after overrides) into
/// `sink`, interning addresses into `interner`. Returns the stream length.
pub fn unroll_each(
    trace: &AnnotatedTrace,
    overrides: &LoopOverrides,
    cap: u64,
    interner: &mut AddressInterner,
    mut sink: impl FnMut(u32),
) -> Result<u64, OracleError> {
    let trace = apply_overrides(trace, overrides)?;
    let length = trace.unrolled_len().ok_or_else(|| OracleError::Overflow {
        length: "more than 2^64".into(),
        cap,
    })?;
    if length > cap {
        return Err(OracleError::Overflow {
            length: length.to_string(),
            cap,
        });
    }
    let vars = trace.tokens.iter().filter_map(|t| match t {
        TraceToken::LoopStart { control_var, .. } => control_var.as_deref(),
        _ => None,
    });
    let mut mat = Materializer::new(vars);
    let mut pos = 0;
    let program = build(&trace.tokens, &mut pos, &mat, interner);
    run(&program, &mut mat, interner, &mut sink);
    Ok(length)
}

/// Fully unrolls `trace`: loops repeat `count` times with their control
/// variable taking `0..count` (and `count` after the loop), array subscripts
/// are evaluated against those values.
pub fn unroll(trace: &AnnotatedTrace, overrides: &LoopOverrides, cap: u64) -> Result<DynamicTrace, OracleError> {
    let mut out = DynamicTrace::default();
    let mut addresses = Vec::new();
    unroll_each(trace, overrides, cap, &mut out.interner, |a| addresses.push(a))?;
    out.addresses = addresses;
    Ok(out)
}

/// Exact histogram of the unrolled trace without materializing it.
pub fn oracle_profile(trace: &AnnotatedTrace, overrides: &LoopOverrides, cap: u64) -> Result<ReuseProfile, OracleError> {
    let mut tracker = StackDistanceTracker::new();
    let mut profile = ReuseProfile::default();
    let mut interner = AddressInterner::default();
    unroll_each(trace, overrides, cap, &mut interner, |a| profile.record(tracker.access(a)))?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;

    fn unrolled(text: &str) -> Vec<String> {
        unroll(&parse_trace(text).unwrap(), &LoopOverrides::default(), DEFAULT_UNROLL_CAP)
            .unwrap()
            .rendered()
    }

    #[test]
    fn unroll_examples() {
        assert_eq!(unrolled("x [2 y x ]"), ["x", "y", "x", "y", "x"]);
        assert_eq!(unrolled("[3~i a~i ]"), ["a@0", "a@1", "a@2"]);
        assert_eq!(unrolled("[2~i [2~j a~i-j ] ] a~i-5"), ["a@0,0", "a@0,1", "a@1,0", "a@1,1", "a@2,5"]);
        assert_eq!(unrolled("a~m"), ["a@m"]);
    }

    #[test]
    fn overrides_by_nesting_path() {
        let trace = parse_trace("[2~i x [3~j y ] [4~k z ] ] [5~t w ]").unwrap();
        let paths: Vec<String> = loop_paths(&trace).unwrap().into_values().collect();
        assert_eq!(paths, ["0", "0.0", "0.1", "1"]);
        let o = LoopOverrides::parse("0=1, 0.1=2,1=1").unwrap();
        let t = apply_overrides(&trace, &o).unwrap();
        assert_eq!(t.render(false), "[1 → x → [3 → y → ] → [2 → z → ] → ] → [1 → w → ]");
        assert_eq!(
            apply_overrides(&trace, &LoopOverrides::parse("0.2=4").unwrap()),
            Err(OracleError::UnknownLoop("0.2".into()))
        );
        assert!(LoopOverrides::parse("0=0").is_err());
        assert!(LoopOverrides::parse("a=1").is_err());
        assert!(LoopOverrides::parse("0.=1").is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let trace = parse_trace("[1000 [1000 x ] ]").unwrap();
        assert!(matches!(
            unroll(&trace, &LoopOverrides::default(), 999_999),
            Err(OracleError::Overflow { .. })
        ));
        assert_eq!(oracle_profile(&trace, &LoopOverrides::default(), 1_000_000).unwrap().total(), 1_000_000);
    }

    #[test]
    fn text_round_trip() {
        let d = unroll(&parse_trace("x [2~i a~i-j ]").unwrap(), &LoopOverrides::default(), 100).unwrap();
        let back = DynamicTrace::from_text(&d.to_text()).unwrap();
        assert_eq!(back.rendered(), d.rendered());
        assert_eq!(d.to_text(), "x\na@0,j\na@1,j\n");
        assert!(DynamicTrace::from_text("a b\n").is_err());
    }
}
