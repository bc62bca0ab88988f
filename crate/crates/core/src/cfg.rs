//! Basic-block control-flow graph with per-block operation tallies and the
//! ordered memory accesses each block performs.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::ops::Add;

use indexmap::IndexMap;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counts::ExecCounts;
use crate::ir::{type_width, FunctionRecord, InstrRecord, Opcode, Operand, SourceLoc, StaticTrace};
use crate::rational::format_exact;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CfgError {
    #[error("function `{0}` not found")]
    FunctionNotFound(String),
    #[error("block `{block}` branches to unknown label `{label}`")]
    DanglingLabel { block: String, label: String },
    #[error("block `{0}` has no terminator")]
    NoTerminator(String),
    #[error("block `{block}`: memory access of type `{ty}` is not 1, 2, 4 or 8 bytes wide")]
    UnsupportedAccessType { block: String, ty: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessOp {
    Load,
    Store,
}

/// One position of an array subscript, flattened: an index expression such
/// as `i * n + j` contributes one `Var` per source variable it reads.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IndexTerm {
    Var(String),
    Const(i64),
}

impl fmt::Display for IndexTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndexTerm::Var(v) => f.write_str(v),
            IndexTerm::Const(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    Scalar,
    Array { base: String, indices: Vec<IndexTerm> },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemAccess {
    pub op_kind: AccessOp,
    pub symbol: String,
    pub access_kind: AccessKind,
    pub byte_width: u32,
}

impl MemAccess {
    pub fn scalar(op_kind: AccessOp, symbol: impl Into<String>, byte_width: u32) -> Self {
        MemAccess {
            op_kind,
            symbol: symbol.into(),
            access_kind: AccessKind::Scalar,
            byte_width,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self.access_kind, AccessKind::Array { .. })
    }

    /// Named index variables in subscript order, without repeats.
    pub fn index_vars(&self) -> Vec<&str> {
        let mut vars: Vec<&str> = Vec::new();
        if let AccessKind::Array { indices, .. } = &self.access_kind {
            for term in indices {
                if let IndexTerm::Var(v) = term {
                    if !vars.contains(&v.as_str()) {
                        vars.push(v);
                    }
                }
            }
        }
        vars
    }

    pub fn const_index_positions(&self) -> BTreeSet<usize> {
        match &self.access_kind {
            AccessKind::Array { indices, .. } => indices
                .iter()
                .enumerate()
                .filter(|(_, t)| matches!(t, IndexTerm::Const(_)))
                .map(|(i, _)| i)
                .collect(),
            AccessKind::Scalar => BTreeSet::new(),
        }
    }

    /// Trace token text: `x` for scalars, `sym~i-j` for arrays.
    pub fn render(&self) -> String {
        match &self.access_kind {
            AccessKind::Scalar => self.symbol.clone(),
            AccessKind::Array { indices, .. } => {
                let parts: Vec<String> = indices.iter().map(IndexTerm::to_string).collect();
                format!("{}~{}", self.symbol, parts.join("-"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Load,
    Store,
    CondBranch,
    UncondBranch,
    Flop,
    IntOp,
    Other,
}

/// Per-block operation counts. `T` is `u64` for a single execution and an
/// exact rational once scaled by an execution count.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally<T = u64> {
    pub loads: T,
    pub stores: T,
    pub cond_branches: T,
    pub uncond_branches: T,
    pub flops: T,
    pub int_ops: T,
    pub other_ops: T,
    pub mem_bytes: T,
}

impl<T> OpTally<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> OpTally<U> {
        OpTally {
            loads: f(&self.loads),
            stores: f(&self.stores),
            cond_branches: f(&self.cond_branches),
            uncond_branches: f(&self.uncond_branches),
            flops: f(&self.flops),
            int_ops: f(&self.int_ops),
            other_ops: f(&self.other_ops),
            mem_bytes: f(&self.mem_bytes),
        }
    }

    /// Fields in CSV column order: loads, stores, mem_bytes, cond, uncond,
    /// flops, int_ops, other.
    pub fn columns(&self) -> [&T; 8] {
        [
            &self.loads,
            &self.stores,
            &self.mem_bytes,
            &self.cond_branches,
            &self.uncond_branches,
            &self.flops,
            &self.int_ops,
            &self.other_ops,
        ]
    }
}

impl<T> OpTally<T>
where
    T: Clone + for<'b> Add<&'b T, Output = T>,
{
    pub fn add_assign_ref(&mut self, other: &OpTally<T>) {
        self.loads = self.loads.clone() + &other.loads;
        self.stores = self.stores.clone() + &other.stores;
        self.cond_branches = self.cond_branches.clone() + &other.cond_branches;
        self.uncond_branches = self.uncond_branches.clone() + &other.uncond_branches;
        self.flops = self.flops.clone() + &other.flops;
        self.int_ops = self.int_ops.clone() + &other.int_ops;
        self.other_ops = self.other_ops.clone() + &other.other_ops;
        self.mem_bytes = self.mem_bytes.clone() + &other.mem_bytes;
    }
}

impl OpTally<u64> {
    fn record(&mut self, category: Category, width: u32) {
        match category {
            Category::Load => {
                self.loads += 1;
                self.mem_bytes += u64::from(width);
            }
            Category::Store => {
                self.stores += 1;
                self.mem_bytes += u64::from(width);
            }
            Category::CondBranch => self.cond_branches += 1,
            Category::UncondBranch => self.uncond_branches += 1,
            Category::Flop => self.flops += 1,
            Category::IntOp => self.int_ops += 1,
            Category::Other => self.other_ops += 1,
        }
    }

    /// Instructions accounted for; equals the block length.
    pub fn instruction_count(&self) -> u64 {
        self.loads
            + self.stores
            + self.cond_branches
            + self.uncond_branches
            + self.flops
            + self.int_ops
            + self.other_ops
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfgNode {
    pub name: String,
    pub tally: OpTally,
    pub accesses: Vec<MemAccess>,
    pub loop_control_var: Option<String>,
    pub position: SourceLoc,
    pub is_return: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    CondTrue,
    CondFalse,
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CfgEdge {
    pub from: String,
    pub to: String,
    pub branch_loc: SourceLoc,
    pub polarity: Polarity,
    pub prob: Option<BigRational>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cfg {
    pub function: String,
    pub nodes: IndexMap<String, CfgNode>,
    pub edges: Vec<CfgEdge>,
    pub entry: String,
}

impl Cfg {
    pub fn out_edges<'a>(&'a self, block: &'a str) -> impl Iterator<Item = &'a CfgEdge> + 'a {
        self.edges.iter().filter(move |e| e.from == block)
    }

    pub fn in_edges<'a>(&'a self, block: &'a str) -> impl Iterator<Item = &'a CfgEdge> + 'a {
        self.edges.iter().filter(move |e| e.to == block)
    }

    pub fn node(&self, name: &str) -> Option<&CfgNode> {
        self.nodes.get(name)
    }

    /// `(block, false-edge target, loc)` for every conditional branch, in
    /// block order.
    pub fn conditional_branches(&self) -> Vec<(&str, &str, SourceLoc)> {
        self.edges
            .iter()
            .filter(|e| e.polarity == Polarity::CondFalse)
            .map(|e| (e.from.as_str(), e.to.as_str(), e.branch_loc))
            .collect()
    }
}

/// Category and access width (bytes of the principal type, 0 when it has
/// no scalar width) of one instruction.
pub fn categorize(instr: &InstrRecord) -> (Category, u32) {
    let width = |ty: Option<&str>| ty.and_then(type_width).unwrap_or(0);
    match instr.opcode {
        Opcode::Load => (Category::Load, width(instr.ty.as_deref())),
        Opcode::Store => (Category::Store, width(instr.ty.as_deref())),
        Opcode::Br if instr.operands.len() == 1 => (Category::UncondBranch, 0),
        Opcode::Br => (Category::CondBranch, 0),
        op if op.is_float_binary() => (Category::Flop, width(instr.ty.as_deref())),
        op if op.is_int_binary() => (Category::IntOp, width(instr.ty.as_deref())),
        _ => (Category::Other, width(instr.ty.as_deref())),
    }
}

pub fn build_cfg(trace: &StaticTrace, function: &str) -> Result<Cfg, CfgError> {
    let func = trace
        .functions
        .iter()
        .find(|f| f.name == function)
        .ok_or_else(|| CfgError::FunctionNotFound(function.to_string()))?;
    build_function_cfg(func)
}

pub fn build_function_cfg(func: &FunctionRecord) -> Result<Cfg, CfgError> {
    let defs: HashMap<&str, &InstrRecord> = func
        .blocks
        .iter()
        .flat_map(|b| &b.instrs)
        .filter_map(|i| i.result.as_deref().map(|r| (r, i)))
        .collect();
    let resolver = Resolver { func, defs };

    let mut nodes = IndexMap::new();
    let mut edges = Vec::new();
    for block in &func.blocks {
        let term = block
            .instrs
            .last()
            .filter(|i| i.opcode.is_terminator())
            .ok_or_else(|| CfgError::NoTerminator(block.name.clone()))?;

        let mut tally = OpTally::default();
        let mut accesses = Vec::new();
        for instr in &block.instrs {
            let (category, width) = categorize(instr);
            if matches!(category, Category::Load | Category::Store) {
                if ![1, 2, 4, 8].contains(&width) {
                    return Err(CfgError::UnsupportedAccessType {
                        block: block.name.clone(),
                        ty: instr.ty.clone().unwrap_or_default(),
                    });
                }
                let ptr = instr.operands.last().expect("load/store carry a pointer");
                let op_kind = if category == Category::Load {
                    AccessOp::Load
                } else {
                    AccessOp::Store
                };
                accesses.push(resolver.access(op_kind, ptr, width));
            }
            tally.record(category, width);
        }

        if term.opcode == Opcode::Br {
            let labels: Vec<&str> = term.operands.iter().filter_map(Operand::label).collect();
            for label in &labels {
                if func.block(label).is_none() {
                    return Err(CfgError::DanglingLabel {
                        block: block.name.clone(),
                        label: label.to_string(),
                    });
                }
            }
            let polarities: &[Polarity] = if labels.len() == 1 {
                &[Polarity::Unconditional]
            } else {
                &[Polarity::CondTrue, Polarity::CondFalse]
            };
            for (label, polarity) in labels.iter().zip(polarities) {
                edges.push(CfgEdge {
                    from: block.name.clone(),
                    to: label.to_string(),
                    branch_loc: term.loc,
                    polarity: *polarity,
                    prob: None,
                });
            }
        }

        let node = CfgNode {
            name: block.name.clone(),
            tally,
            accesses,
            loop_control_var: resolver.loop_control_var(&block.instrs),
            position: block.instrs[0].loc,
            is_return: term.opcode == Opcode::Ret,
        };
        nodes.insert(block.name.clone(), node);
    }

    Ok(Cfg {
        function: func.name.clone(),
        nodes,
        edges,
        entry: func.blocks[0].name.clone(),
    })
}

struct Resolver<'a> {
    func: &'a FunctionRecord,
    defs: HashMap<&'a str, &'a InstrRecord>,
}

impl Resolver<'_> {
    fn def(&self, sym: &str) -> Option<&InstrRecord> {
        self.defs.get(sym).copied()
    }

    fn access(&self, op_kind: AccessOp, ptr: &Operand, width: u32) -> MemAccess {
        let sym = ptr.symbol().unwrap_or("<const>");
        if let Some((root, indices)) = self.gep_chain(sym) {
            let symbol = if sym.bytes().all(|b| b.is_ascii_digit()) {
                root.clone()
            } else {
                sym.to_string()
            };
            return MemAccess {
                op_kind,
                symbol,
                access_kind: AccessKind::Array {
                    base: root,
                    indices,
                },
                byte_width: width,
            };
        }
        MemAccess::scalar(op_kind, self.root_name(sym), width)
    }

    /// Storage a pointer value designates: an alloca (by source name), an
    /// argument or global, or `*p` for a pointer loaded from variable `p`.
    fn root_name(&self, sym: &str) -> String {
        match self.def(sym) {
            Some(i) if i.opcode == Opcode::Alloca => self.func.display_name(sym).to_string(),
            Some(i) if i.opcode == Opcode::Load => {
                let inner = i.operands[0].symbol().unwrap_or("<const>");
                format!("*{}", self.root_name(inner))
            }
            Some(i) if i.opcode.is_cast() => match i.operands[0].symbol() {
                Some(inner) => self.root_name(inner),
                None => sym.to_string(),
            },
            Some(i) if i.opcode == Opcode::GetElementPtr => match i.operands[0].symbol() {
                Some(inner) => self.root_name(inner),
                None => sym.to_string(),
            },
            _ => self.func.display_name(sym).to_string(),
        }
    }

    /// Base storage and flattened subscripts of a `getelementptr` chain.
    fn gep_chain(&self, sym: &str) -> Option<(String, Vec<IndexTerm>)> {
        let gep = self.def(sym).filter(|i| i.opcode == Opcode::GetElementPtr)?;
        let base = gep.operands[0].symbol();
        let (root, mut indices) = match base.and_then(|b| self.gep_chain(b)) {
            Some(chain) => chain,
            None => (
                base.map(|b| self.base_name(b)).unwrap_or_else(|| "<const>".into()),
                Vec::new(),
            ),
        };
        let aggregate = gep
            .ty
            .as_deref()
            .is_some_and(|t| t.starts_with('[') || t.starts_with('{') || t.starts_with('%'));
        let mut subscripts = &gep.operands[1..];
        if aggregate && subscripts.first().and_then(Operand::constant) == Some("0") {
            subscripts = &subscripts[1..];
        }
        for op in subscripts {
            match &op.value {
                crate::ir::OperandValue::Constant(c) => {
                    indices.push(IndexTerm::Const(c.parse().unwrap_or(0)));
                }
                crate::ir::OperandValue::Symbol(s) => {
                    let mut vars = Vec::new();
                    self.index_vars(s, &mut vars, 0);
                    if vars.is_empty() {
                        vars.push(self.func.display_name(s).to_string());
                    }
                    indices.extend(vars.into_iter().map(IndexTerm::Var));
                }
                crate::ir::OperandValue::Label(_) => {}
            }
        }
        Some((root, indices))
    }

    /// Name of the storage a GEP walks from: a loaded pointer is named after
    /// the variable holding it.
    fn base_name(&self, sym: &str) -> String {
        match self.def(sym) {
            Some(i) if i.opcode == Opcode::Load => match i.operands[0].symbol() {
                Some(inner) => self.root_name(inner),
                None => sym.to_string(),
            },
            _ => self.root_name(sym),
        }
    }

    fn index_vars(&self, sym: &str, out: &mut Vec<String>, depth: usize) {
        if depth > 64 {
            return;
        }
        match self.def(sym) {
            Some(i) if i.opcode == Opcode::Load => {
                if let Some(ptr) = i.operands[0].symbol() {
                    let name = self.root_name(ptr);
                    if !out.contains(&name) {
                        out.push(name);
                    }
                }
            }
            Some(i) if i.opcode.is_cast() || i.opcode.is_int_binary() => {
                for op in &i.operands {
                    if let Some(s) = op.symbol() {
                        self.index_vars(s, out, depth + 1);
                    }
                }
            }
            Some(_) => {}
            None => {
                // function argument used directly
                let name = self.func.display_name(sym).to_string();
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
    }

    /// The variable loaded (optionally through casts) and compared by the
    /// icmp/fcmp that feeds this block's conditional branch; first in
    /// instruction order when several qualify.
    fn loop_control_var(&self, instrs: &[InstrRecord]) -> Option<String> {
        let term = instrs.last()?;
        if term.opcode != Opcode::Br || term.operands.len() != 3 {
            return None;
        }
        let cond = term.operands[0].symbol()?;
        let position = |sym: &str| instrs.iter().position(|i| i.result.as_deref() == Some(sym));
        let cmp_pos = position(cond)?;
        let cmp = &instrs[cmp_pos];
        if !matches!(cmp.opcode, Opcode::Icmp | Opcode::Fcmp) {
            return None;
        }
        let mut best: Option<(usize, String)> = None;
        for op in &cmp.operands {
            let mut cur = match op.symbol() {
                Some(s) => s,
                None => continue,
            };
            while let Some(pos) = position(cur) {
                let instr = &instrs[pos];
                if instr.opcode.is_cast() {
                    match instr.operands[0].symbol() {
                        Some(inner) => cur = inner,
                        None => break,
                    }
                    continue;
                }
                if instr.opcode == Opcode::Load {
                    let ptr = instr.operands[0].symbol();
                    let is_var = ptr
                        .and_then(|p| self.def(p))
                        .is_some_and(|d| d.opcode == Opcode::Alloca);
                    if is_var && best.as_ref().is_none_or(|(p, _)| pos < *p) {
                        best = Some((pos, self.func.display_name(ptr.unwrap()).to_string()));
                    }
                }
                break;
            }
        }
        best.map(|(_, v)| v)
    }
}

/// Graphviz rendering; nodes sorted by name, edges by (from, to, polarity).
pub fn emit_dot(cfg: &Cfg, counts: Option<&ExecCounts>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", escape(&cfg.function));
    let _ = writeln!(out, "  node [shape=box];");
    let mut names: Vec<&String> = cfg.nodes.keys().collect();
    names.sort();
    for name in names {
        let label = match counts.and_then(|c| c.n.get(name.as_str())) {
            Some(n) => format!("{}\\nN={}", escape(name), format_exact(n)),
            None => escape(name),
        };
        let _ = writeln!(out, "  \"{}\" [label=\"{}\"];", escape(name), label);
    }
    let mut edges: Vec<&CfgEdge> = cfg.edges.iter().collect();
    edges.sort_by(|a, b| (&a.from, &a.to, a.polarity).cmp(&(&b.from, &b.to, b.polarity)));
    for edge in edges {
        let label = match &edge.prob {
            Some(p) => format!(" [label=\"p={}\"]", format_exact(p)),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\"{};",
            escape(&edge.from),
            escape(&edge.to),
            label
        );
    }
    out.push_str("}\n");
    out
}

fn escape(text: &str) -> String {
    text.replace('\\', "\\\\").replace('"', "\\\"")
}
