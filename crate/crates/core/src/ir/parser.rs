use std::collections::{BTreeMap, HashMap, HashSet};

use super::{
    BlockRecord, FunctionRecord, InstrRecord, Opcode, Operand, OperandValue, ParseError,
    SourceLoc, StaticTrace,
};

/// Keywords that may follow an opcode and carry no operand information.
const FLAGS: &[&str] = &[
    "nuw", "nsw", "exact", "inbounds", "volatile", "fast", "nnan", "ninf", "nsz", "arcp",
    "contract", "afn", "reassoc", "disjoint", "nneg", "nusw",
];

/// Parameter attributes that can appear inside an operand's type.
const PARAM_ATTRS: &[&str] = &[
    "noundef", "nonnull", "signext", "zeroext", "noalias", "nocapture", "readonly", "writeonly",
    "returned", "immarg",
];

/// Parses the supported subset of textual IR. With `function` set, only that
/// function is kept and it must exist.
pub fn parse_ir(text: &str, function: Option<&str>) -> Result<StaticTrace, ParseError> {
    let meta = Metadata::collect(text);
    let mut module_name = String::from("<stdin>");
    let mut functions = Vec::new();

    let lines: Vec<&str> = text.lines().collect();
    let mut idx = 0;
    while idx < lines.len() {
        let raw = lines[idx];
        let trimmed = raw.trim_start();
        if let Some(rest) = trimmed.strip_prefix("; ModuleID = ") {
            module_name = rest.trim().trim_matches('\'').to_string();
        } else if trimmed.starts_with("define ") {
            let end = lines[idx..]
                .iter()
                .position(|l| l.trim() == "}")
                .map(|off| idx + off)
                .ok_or_else(|| malformed(idx + 1, "function body is not closed"))?;
            let func = FunctionParser::new(&meta).parse(&lines, idx, end)?;
            if function.is_none_or(|name| name == func.name) {
                functions.push(func);
            }
            idx = end;
        }
        idx += 1;
    }

    if let Some(name) = function {
        if functions.is_empty() {
            return Err(ParseError::FunctionNotFound(name.to_string()));
        }
    }
    Ok(StaticTrace {
        module_name,
        functions,
    })
}

fn malformed(line: usize, reason: impl Into<String>) -> ParseError {
    ParseError::MalformedIR {
        line,
        reason: reason.into(),
    }
}

/// `!DILocation` and `!DILocalVariable` definitions, keyed by metadata id.
#[derive(Default)]
struct Metadata {
    locations: HashMap<String, SourceLoc>,
    variables: HashMap<String, String>,
}

impl Metadata {
    fn collect(text: &str) -> Self {
        let mut meta = Metadata::default();
        for line in text.lines() {
            let line = line.trim();
            if !line.starts_with('!') {
                continue;
            }
            let Some((id, body)) = line.split_once(" = ") else {
                continue;
            };
            let body = body.trim_start_matches("distinct ").trim();
            if let Some(args) = body.strip_prefix("!DILocation(") {
                let line_no = field(args, "line").and_then(|v| v.parse().ok()).unwrap_or(0);
                let col = field(args, "column").and_then(|v| v.parse().ok()).unwrap_or(0);
                meta.locations
                    .insert(id.to_string(), SourceLoc::new(line_no, col));
            } else if let Some(args) = body.strip_prefix("!DILocalVariable(") {
                if let Some(name) = field(args, "name") {
                    meta.variables
                        .insert(id.to_string(), name.trim_matches('"').to_string());
                }
            }
        }
        meta
    }
}

/// Value of `key: value` inside a specialized metadata node's argument list.
fn field<'a>(args: &'a str, key: &str) -> Option<&'a str> {
    split_top_level(args.trim_end_matches(')'))
        .into_iter()
        .find_map(|part| {
            let (k, v) = part.split_once(':')?;
            (k.trim() == key).then(|| v.trim())
        })
}

/// Splits on commas that are not nested inside brackets, braces, parens,
/// angle brackets or quotes.
fn split_top_level(text: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        match ch {
            '"' => in_quote = !in_quote,
            '[' | '{' | '(' | '<' if !in_quote => depth += 1,
            ']' | '}' | ')' | '>' if !in_quote => depth -= 1,
            ',' if !in_quote && depth == 0 => {
                parts.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        parts.push(tail);
    }
    parts
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quote = !in_quote,
            ';' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn value_name(token: &str) -> String {
    token.trim_matches('"').to_string()
}

/// Classifies a value token: `%x` is a local symbol, `@g` a global (kept with
/// its sigil), anything else a constant.
fn parse_value(token: &str) -> OperandValue {
    if let Some(name) = token.strip_prefix('%') {
        OperandValue::Symbol(value_name(name))
    } else if token.starts_with('@') {
        OperandValue::Symbol(token.to_string())
    } else {
        OperandValue::Constant(token.to_string())
    }
}

fn clean_type(words: &[&str]) -> String {
    words
        .iter()
        .filter(|w| !PARAM_ATTRS.contains(w))
        .copied()
        .collect::<Vec<_>>()
        .join(" ")
}

struct FunctionParser<'m> {
    meta: &'m Metadata,
    /// numbered value counter for the implicit name of an unnamed entry block
    unnamed_args: usize,
    /// alloca IR name -> debug variable metadata id
    declared: Vec<(String, String)>,
}

impl<'m> FunctionParser<'m> {
    fn new(meta: &'m Metadata) -> Self {
        FunctionParser {
            meta,
            unnamed_args: 0,
            declared: Vec::new(),
        }
    }

    fn parse(mut self, lines: &[&str], start: usize, end: usize) -> Result<FunctionRecord, ParseError> {
        let header = strip_comment(lines[start]);
        let (name, args) = self.parse_header(header, start + 1)?;

        let mut blocks: Vec<BlockRecord> = Vec::new();
        let mut current: Option<BlockRecord> = None;
        for (off, raw) in lines[start + 1..end].iter().enumerate() {
            let line_no = start + 2 + off;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(label) = block_label(line) {
                if let Some(done) = current.take() {
                    blocks.push(done);
                }
                current = Some(BlockRecord {
                    name: label,
                    instrs: Vec::new(),
                });
                continue;
            }
            if line.starts_with("#dbg_") {
                self.note_debug_record(line);
                continue;
            }
            let block = current.get_or_insert_with(|| BlockRecord {
                name: self.unnamed_args.to_string(),
                instrs: Vec::new(),
            });
            if let Some(instr) = self.parse_instr(line, line_no)? {
                block.instrs.push(instr);
            }
        }
        if let Some(done) = current.take() {
            blocks.push(done);
        }

        validate_blocks(&blocks, start + 1)?;
        validate_symbols(&blocks, &args)?;
        let debug_names = self.recover_names(&blocks);
        Ok(FunctionRecord {
            name,
            args,
            blocks,
            debug_names,
        })
    }

    fn parse_header(&mut self, header: &str, line: usize) -> Result<(String, Vec<Operand>), ParseError> {
        let at = header
            .find('@')
            .ok_or_else(|| malformed(line, "function definition without a name"))?;
        let open = header[at..]
            .find('(')
            .map(|o| at + o)
            .ok_or_else(|| malformed(line, "function definition without an argument list"))?;
        let name = value_name(&header[at + 1..open]);
        let mut depth = 0;
        let mut close = None;
        for (i, ch) in header[open..].char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(open + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let close = close.ok_or_else(|| malformed(line, "unbalanced argument list"))?;
        let mut args = Vec::new();
        for part in split_top_level(&header[open + 1..close]) {
            if part == "..." {
                continue;
            }
            let words: Vec<&str> = part.split_whitespace().collect();
            let (ty_words, value) = match words.last() {
                Some(last) if last.starts_with('%') => {
                    (&words[..words.len() - 1], parse_value(last))
                }
                _ => {
                    let value = OperandValue::Symbol(self.unnamed_args.to_string());
                    (&words[..], value)
                }
            };
            if matches!(&value, OperandValue::Symbol(s) if s.bytes().all(|b| b.is_ascii_digit())) {
                self.unnamed_args += 1;
            }
            args.push(Operand {
                type_str: clean_type(ty_words),
                value,
            });
        }
        Ok((name, args))
    }

    fn note_debug_record(&mut self, line: &str) {
        // #dbg_declare(ptr %i, !15, !DIExpression(), !17)
        if let Some(args) = line
            .strip_prefix("#dbg_declare(")
            .and_then(|rest| rest.strip_suffix(')'))
        {
            let parts = split_top_level(args);
            if let (Some(ptr), Some(var)) = (parts.first(), parts.get(1)) {
                if let Some(OperandValue::Symbol(sym)) =
                    ptr.split_whitespace().last().map(parse_value)
                {
                    self.declared.push((sym, var.to_string()));
                }
            }
        }
    }

    fn parse_instr(&mut self, line: &str, line_no: usize) -> Result<Option<InstrRecord>, ParseError> {
        let (result, body) = match line.split_once(" = ") {
            Some((lhs, rhs)) if lhs.starts_with('%') && !lhs.contains(' ') => {
                (Some(value_name(&lhs[1..])), rhs.trim())
            }
            _ => (None, line),
        };
        let (mnemonic, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));

        if matches!(mnemonic, "call" | "tail" | "notail" | "musttail") && body.contains("@llvm.dbg.") {
            self.note_debug_call(body);
            return Ok(None);
        }
        let opcode = Opcode::from_mnemonic(mnemonic).ok_or_else(|| ParseError::UnsupportedOpcode {
            line: line_no,
            opcode: mnemonic.to_string(),
        })?;

        let mut rest = rest.trim();
        let mut predicate = None;
        if matches!(opcode, Opcode::Icmp | Opcode::Fcmp) {
            let (pred, tail) = rest
                .split_once(char::is_whitespace)
                .ok_or_else(|| malformed(line_no, "compare without operands"))?;
            predicate = Some(pred.to_string());
            rest = tail.trim();
        }
        loop {
            let (word, tail) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            if FLAGS.contains(&word) {
                rest = tail.trim();
            } else {
                break;
            }
        }
        if matches!(opcode, Opcode::Icmp | Opcode::Fcmp) {
            // fast-math flags precede the predicate on fcmp
            if let Some(p) = predicate.as_deref() {
                if FLAGS.contains(&p) {
                    let (pred, tail) = rest
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| malformed(line_no, "compare without operands"))?;
                    predicate = Some(pred.to_string());
                    rest = tail.trim();
                }
            }
        }

        let mut loc = SourceLoc::UNKNOWN;
        let mut parts = Vec::new();
        for part in split_top_level(rest) {
            if let Some(attachment) = part.strip_prefix('!') {
                if let Some(id) = attachment.strip_prefix("dbg ") {
                    loc = self
                        .meta
                        .locations
                        .get(id.trim())
                        .copied()
                        .unwrap_or(SourceLoc::UNKNOWN);
                }
            } else if !(part.starts_with("align ") || part.starts_with("addrspace(")) {
                parts.push(part);
            }
        }

        let operand = |part: &str| -> Result<Operand, ParseError> {
            let words: Vec<&str> = part.split_whitespace().collect();
            match words.as_slice() {
                [] => Err(malformed(line_no, "empty operand")),
                [_only] => Err(malformed(line_no, format!("operand `{part}` lacks a type"))),
                [ty @ .., value] => {
                    if value.contains('(') || value.contains(')') {
                        return Err(malformed(line_no, format!("constant expression `{part}` is not supported")));
                    }
                    let value = if ty == ["label"] {
                        OperandValue::Label(value_name(value.trim_start_matches('%')))
                    } else {
                        parse_value(value)
                    };
                    Ok(Operand {
                        type_str: clean_type(ty),
                        value,
                    })
                }
            }
        };
        let expect = |n: usize| -> Result<(), ParseError> {
            if parts.len() == n {
                Ok(())
            } else {
                Err(malformed(
                    line_no,
                    format!("`{mnemonic}` expects {n} operand(s), found {}", parts.len()),
                ))
            }
        };

        let mut ty = None;
        let operands = match opcode {
            Opcode::Alloca => {
                let alloc_ty = *parts
                    .first()
                    .ok_or_else(|| malformed(line_no, "alloca without a type"))?;
                ty = Some(alloc_ty.to_string());
                let count = match parts.get(1) {
                    Some(p) => operand(p)?,
                    None => Operand {
                        type_str: "i32".into(),
                        value: OperandValue::Constant("1".into()),
                    },
                };
                vec![count]
            }
            Opcode::Load => {
                expect(2)?;
                ty = Some(parts[0].to_string());
                vec![operand(parts[1])?]
            }
            Opcode::Store => {
                expect(2)?;
                let value = operand(parts[0])?;
                ty = Some(value.type_str.clone());
                vec![value, operand(parts[1])?]
            }
            Opcode::Br => {
                let ops = parts.iter().map(|p| operand(p)).collect::<Result<Vec<_>, _>>()?;
                let ok = match ops.as_slice() {
                    [target] => target.label().is_some(),
                    [_, t, f] => t.label().is_some() && f.label().is_some(),
                    _ => false,
                };
                if !ok {
                    return Err(malformed(line_no, "br needs one label or a condition and two labels"));
                }
                ops
            }
            Opcode::Ret => {
                if parts == ["void"] {
                    Vec::new()
                } else {
                    expect(1)?;
                    vec![operand(parts[0])?]
                }
            }
            Opcode::GetElementPtr => {
                if parts.len() < 3 {
                    return Err(malformed(line_no, "getelementptr needs a pointer and at least one index"));
                }
                ty = Some(parts[0].to_string());
                parts[1..].iter().map(|p| operand(p)).collect::<Result<Vec<_>, _>>()?
            }
            Opcode::Icmp | Opcode::Fcmp => {
                expect(2)?;
                let lhs = operand(parts[0])?;
                let rhs = Operand {
                    type_str: lhs.type_str.clone(),
                    value: parse_value(parts[1]),
                };
                ty = Some(lhs.type_str.clone());
                vec![lhs, rhs]
            }
            op if op.is_int_binary() || op.is_float_binary() => {
                expect(2)?;
                let lhs = operand(parts[0])?;
                let rhs = Operand {
                    type_str: lhs.type_str.clone(),
                    value: parse_value(parts[1]),
                };
                ty = Some(lhs.type_str.clone());
                vec![lhs, rhs]
            }
            _ => {
                // casts: `<ty> <value> to <ty2>`
                expect(1)?;
                let (src, dst) = parts[0]
                    .rsplit_once(" to ")
                    .ok_or_else(|| malformed(line_no, "cast without `to`"))?;
                ty = Some(dst.trim().to_string());
                vec![operand(src)?]
            }
        };

        if opcode == Opcode::Alloca && result.is_none() {
            return Err(malformed(line_no, "alloca result is unnamed"));
        }
        Ok(Some(InstrRecord {
            opcode,
            loc,
            operands,
            result,
            ty,
            predicate,
            ir_line: line_no,
        }))
    }

    fn note_debug_call(&mut self, body: &str) {
        // call void @llvm.dbg.declare(metadata i32* %i, metadata !15, metadata !DIExpression())
        if !body.contains("@llvm.dbg.declare(") {
            return;
        }
        let Some(open) = body.find('(') else { return };
        let Some(close) = body.rfind(')') else { return };
        let parts = split_top_level(&body[open + 1..close]);
        let (Some(ptr), Some(var)) = (parts.first(), parts.get(1)) else {
            return;
        };
        let sym = ptr.split_whitespace().last().map(parse_value);
        let var = var.trim_start_matches("metadata").trim();
        if let Some(OperandValue::Symbol(sym)) = sym {
            self.declared.push((sym, var.to_string()));
        }
    }

    fn recover_names(&self, blocks: &[BlockRecord]) -> BTreeMap<String, String> {
        let mut taken: HashSet<String> = blocks
            .iter()
            .flat_map(|b| &b.instrs)
            .filter(|i| i.opcode == Opcode::Alloca)
            .filter_map(|i| i.result.clone())
            .filter(|r| !r.bytes().all(|b| b.is_ascii_digit()))
            .collect();
        let mut names = BTreeMap::new();
        for (sym, var) in &self.declared {
            if !sym.bytes().all(|b| b.is_ascii_digit()) || names.contains_key(sym) {
                continue;
            }
            let Some(source) = self.meta.variables.get(var) else {
                continue;
            };
            let mut candidate = source.clone();
            let mut n = 1;
            while taken.contains(&candidate) {
                candidate = format!("{source}.{n}");
                n += 1;
            }
            taken.insert(candidate.clone());
            names.insert(sym.clone(), candidate);
        }
        names
    }
}

fn block_label(line: &str) -> Option<String> {
    let label = line.strip_suffix(':')?;
    if label.is_empty() || label.contains(char::is_whitespace) && !label.starts_with('"') {
        return None;
    }
    Some(value_name(label))
}

fn validate_blocks(blocks: &[BlockRecord], def_line: usize) -> Result<(), ParseError> {
    if blocks.is_empty() {
        return Err(malformed(def_line, "function has no basic blocks"));
    }
    let mut seen = HashSet::new();
    for block in blocks {
        if !seen.insert(block.name.as_str()) {
            return Err(malformed(def_line, format!("duplicate block label `{}`", block.name)));
        }
        let Some(last) = block.instrs.last() else {
            return Err(malformed(def_line, format!("block `{}` is empty", block.name)));
        };
        if !last.opcode.is_terminator() {
            return Err(malformed(
                last.ir_line,
                format!("block `{}` does not end in br or ret", block.name),
            ));
        }
        if let Some(early) = block.instrs[..block.instrs.len() - 1]
            .iter()
            .find(|i| i.opcode.is_terminator())
        {
            return Err(malformed(
                early.ir_line,
                format!("terminator before the end of block `{}`", block.name),
            ));
        }
    }
    Ok(())
}

fn validate_symbols(blocks: &[BlockRecord], args: &[Operand]) -> Result<(), ParseError> {
    let defined: HashSet<&str> = args
        .iter()
        .filter_map(Operand::symbol)
        .chain(blocks.iter().flat_map(|b| &b.instrs).filter_map(|i| i.result.as_deref()))
        .collect();
    for instr in blocks.iter().flat_map(|b| &b.instrs) {
        for op in &instr.operands {
            if let Some(sym) = op.symbol() {
                if !sym.starts_with('@') && !defined.contains(sym) {
                    return Err(malformed(instr.ir_line, format!("use of undefined value %{sym}")));
                }
            }
        }
    }
    Ok(())
}
