//! Static trace of an unoptimized LLVM IR module.
//!
//! The trace is a plain hierarchy (module, functions, blocks, instructions)
//! recovered directly from textual IR as emitted by `clang -g -O0 -emit-llvm -S`.
//! Every instruction keeps its source location from the `!dbg` attachment, its
//! operand list with types, and the name of the value it defines.

mod parser;

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parser::parse_ir;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}: unsupported opcode `{opcode}`")]
    UnsupportedOpcode { line: usize, opcode: String },
    #[error("line {line}: malformed IR: {reason}")]
    MalformedIR { line: usize, reason: String },
    #[error("function `{0}` not found")]
    FunctionNotFound(String),
}

/// Source position taken from debug info. `(0, 0)` marks an instruction
/// without a `!dbg` attachment.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SourceLoc {
    pub line: u32,
    pub col: u32,
}

impl SourceLoc {
    pub const UNKNOWN: SourceLoc = SourceLoc { line: 0, col: 0 };

    pub fn new(line: u32, col: u32) -> Self {
        if line == 0 {
            Self::UNKNOWN
        } else {
            SourceLoc { line, col }
        }
    }

    pub fn is_known(&self) -> bool {
        self.line != 0
    }
}

impl fmt::Display for SourceLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperandValue {
    /// A named or numbered SSA value, an alloca, an argument or a global
    /// (globals keep their `@` sigil).
    Symbol(String),
    Constant(String),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operand {
    pub type_str: String,
    pub value: OperandValue,
}

impl Operand {
    pub fn is_constant(&self) -> bool {
        matches!(self.value, OperandValue::Constant(_))
    }

    pub fn symbol(&self) -> Option<&str> {
        match &self.value {
            OperandValue::Symbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<&str> {
        match &self.value {
            OperandValue::Label(s) => Some(s),
            _ => None,
        }
    }

    pub fn constant(&self) -> Option<&str> {
        match &self.value {
            OperandValue::Constant(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let value = match &self.value {
            OperandValue::Symbol(s) | OperandValue::Constant(s) | OperandValue::Label(s) => s,
        };
        write!(f, "{} {}", self.type_str, value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Alloca,
    Load,
    Store,
    Br,
    Icmp,
    Fcmp,
    Ret,
    GetElementPtr,
    Add,
    Sub,
    Mul,
    UDiv,
    SDiv,
    URem,
    SRem,
    FAdd,
    FSub,
    FMul,
    FDiv,
    FRem,
    SExt,
    ZExt,
    Trunc,
    SIToFP,
    FPToSI,
    BitCast,
}

impl Opcode {
    const ALL: [Opcode; 26] = [
        Opcode::Alloca,
        Opcode::Load,
        Opcode::Store,
        Opcode::Br,
        Opcode::Icmp,
        Opcode::Fcmp,
        Opcode::Ret,
        Opcode::GetElementPtr,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::UDiv,
        Opcode::SDiv,
        Opcode::URem,
        Opcode::SRem,
        Opcode::FAdd,
        Opcode::FSub,
        Opcode::FMul,
        Opcode::FDiv,
        Opcode::FRem,
        Opcode::SExt,
        Opcode::ZExt,
        Opcode::Trunc,
        Opcode::SIToFP,
        Opcode::FPToSI,
        Opcode::BitCast,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Alloca => "alloca",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Br => "br",
            Opcode::Icmp => "icmp",
            Opcode::Fcmp => "fcmp",
            Opcode::Ret => "ret",
            Opcode::GetElementPtr => "getelementptr",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::UDiv => "udiv",
            Opcode::SDiv => "sdiv",
            Opcode::URem => "urem",
            Opcode::SRem => "srem",
            Opcode::FAdd => "fadd",
            Opcode::FSub => "fsub",
            Opcode::FMul => "fmul",
            Opcode::FDiv => "fdiv",
            Opcode::FRem => "frem",
            Opcode::SExt => "sext",
            Opcode::ZExt => "zext",
            Opcode::Trunc => "trunc",
            Opcode::SIToFP => "sitofp",
            Opcode::FPToSI => "fptosi",
            Opcode::BitCast => "bitcast",
        }
    }

    pub fn from_mnemonic(text: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == text)
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Br | Opcode::Ret)
    }

    pub fn is_int_binary(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::UDiv
                | Opcode::SDiv
                | Opcode::URem
                | Opcode::SRem
        )
    }

    pub fn is_float_binary(self) -> bool {
        matches!(
            self,
            Opcode::FAdd | Opcode::FSub | Opcode::FMul | Opcode::FDiv | Opcode::FRem
        )
    }

    pub fn is_cast(self) -> bool {
        matches!(
            self,
            Opcode::SExt
                | Opcode::ZExt
                | Opcode::Trunc
                | Opcode::SIToFP
                | Opcode::FPToSI
                | Opcode::BitCast
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrRecord {
    pub opcode: Opcode,
    pub loc: SourceLoc,
    pub operands: Vec<Operand>,
    pub result: Option<String>,
    /// The instruction's principal type: allocated type for `alloca`, loaded
    /// type for `load`, source element type for `getelementptr`, operand type
    /// for binary operators and compares, destination type for casts.
    pub ty: Option<String>,
    /// Comparison predicate for `icmp` / `fcmp`.
    pub predicate: Option<String>,
    /// 1-based line in the `.ll` text, for diagnostics.
    pub ir_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub name: String,
    pub instrs: Vec<InstrRecord>,
}

impl BlockRecord {
    pub fn terminator(&self) -> &InstrRecord {
        self.instrs.last().expect("blocks are nonempty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub name: String,
    pub args: Vec<Operand>,
    pub blocks: Vec<BlockRecord>,
    /// Source variable names recovered from debug declarations for allocas
    /// whose IR name is only a number (clang discards value names by default).
    pub debug_names: BTreeMap<String, String>,
}

impl FunctionRecord {
    pub fn block(&self, name: &str) -> Option<&BlockRecord> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Name used for a memory symbol in traces: the recovered source name if
    /// there is one, otherwise the IR name.
    pub fn display_name<'a>(&'a self, ir_name: &'a str) -> &'a str {
        self.debug_names
            .get(ir_name)
            .map(String::as_str)
            .unwrap_or(ir_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticTrace {
    pub module_name: String,
    pub functions: Vec<FunctionRecord>,
}

impl StaticTrace {
    pub fn function(&self, name: &str) -> Result<&FunctionRecord, ParseError> {
        self.functions
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| ParseError::FunctionNotFound(name.to_string()))
    }

    /// The named function, or the only function when `name` is `None`.
    pub fn select(&self, name: Option<&str>) -> Result<&FunctionRecord, ParseError> {
        match name {
            Some(name) => self.function(name),
            None => match self.functions.as_slice() {
                [only] => Ok(only),
                [] => Err(ParseError::FunctionNotFound("<any>".into())),
                _ => Err(ParseError::FunctionNotFound(
                    "<unspecified: module defines several functions, pass a name>".into(),
                )),
            },
        }
    }
}

/// Line-oriented, deterministic dump of a static trace.
pub fn dump_static_trace(trace: &StaticTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Module : {}", trace.module_name);
    for func in &trace.functions {
        let args: Vec<String> = func.args.iter().map(Operand::to_string).collect();
        let _ = writeln!(out, "  Function : {} : ({})", func.name, args.join(", "));
        for block in &func.blocks {
            let _ = writeln!(out, "    BasicBlock : {}", block.name);
            for instr in &block.instrs {
                let ops: Vec<String> = instr
                    .operands
                    .iter()
                    .map(|op| match op.symbol().map(|s| func.display_name(s)) {
                        Some(name) if name.bytes().all(|b| b.is_ascii_digit()) => {
                            format!("{} %{}", op.type_str, name)
                        }
                        Some(name) => format!("{} {}", op.type_str, name),
                        None => op.to_string(),
                    })
                    .collect();
                let _ = writeln!(
                    out,
                    "      {} : {} : {}",
                    instr.loc,
                    instr.opcode,
                    ops.join(", ")
                );
            }
        }
    }
    out
}

/// Size in bytes of a first-class scalar type, if it is one.
pub fn type_width(ty: &str) -> Option<u32> {
    let ty = ty.trim();
    if ty.ends_with('*') || ty == "ptr" || ty.starts_with("ptr ") {
        return Some(8);
    }
    match ty {
        "i1" | "i8" => Some(1),
        "i16" | "half" => Some(2),
        "i32" | "float" => Some(4),
        "i64" | "double" => Some(8),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths() {
        assert_eq!(type_width("i32"), Some(4));
        assert_eq!(type_width("double"), Some(8));
        assert_eq!(type_width("i32*"), Some(8));
        assert_eq!(type_width("ptr"), Some(8));
        assert_eq!(type_width("i8"), Some(1));
        assert_eq!(type_width("[3 x i32]"), None);
    }

    #[test]
    fn empty_module_dumps_header_only() {
        let trace = StaticTrace {
            module_name: "empty.c".into(),
            functions: vec![],
        };
        assert_eq!(dump_static_trace(&trace), "Module : empty.c\n");
    }

    #[test]
    fn opcode_mnemonics_round_trip() {
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(op));
        }
        assert_eq!(Opcode::from_mnemonic("phi"), None);
    }
}
