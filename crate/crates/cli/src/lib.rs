//! Subcommand implementations for the `reuse-scope` binary. Each command
//! reads its inputs from a [`RunConfig`] and returns the artifact text.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use reuse_scope::counts::format_apriori;
use reuse_scope::oracle::{
    self, apply_overrides, stack, DynamicTrace, LoopBounds, LoopOverrides, DEFAULT_UNROLL_CAP,
};
use reuse_scope::trace::check_loop_counts;
use reuse_scope::{
    attach_probabilities, build_function_cfg, calc_reuse_profile, characterize, compare_profiles,
    dump_static_trace, emit_dot, emit_template, expand_memory_trace, max_prob_path, parse_config, parse_ir,
    parse_trace, solve_counts, AnnotatedTrace, Cfg, CountError, Error, ExecCounts, OracleError, ProbConfig,
    ProfileComparison, ReuseError, ReuseProfile, TraceError,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Solve(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Config(_) => 3,
            CliError::Solve(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let msg = err.to_string();
        match err {
            Error::Parse(_) | Error::Cfg(_) => CliError::Parse(msg),
            Error::Prob(_) => CliError::Config(msg),
            Error::Count(CountError::MissingProbability { .. } | CountError::UnknownKey { .. }) => {
                CliError::Config(msg)
            }
            Error::Count(CountError::Branch(_)) => CliError::Config(msg),
            Error::Count(_) => CliError::Solve(msg),
            Error::Trace(TraceError::Syntax { .. } | TraceError::Unbalanced) => CliError::Parse(msg),
            Error::Trace(_) => CliError::Solve(msg),
            Error::Reuse(ReuseError::BadProfile { .. } | ReuseError::UnbalancedTrace) => CliError::Parse(msg),
            Error::Reuse(ReuseError::Overflow) => CliError::Solve(msg),
            Error::Oracle(OracleError::BadTrace { .. } | OracleError::Unbalanced) => CliError::Parse(msg),
            Error::Oracle(
                OracleError::BadOverride(_)
                | OracleError::UnknownLoop(_)
                | OracleError::NonIntegralBound { .. }
                | OracleError::UnlabeledEdge { .. },
            ) => CliError::Config(msg),
            Error::Oracle(_) => CliError::Solve(msg),
        }
    }
}

fn lift<T, E: Into<Error>>(r: Result<T, E>) -> Result<T, CliError> {
    r.map_err(|e| CliError::from(e.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
    Json,
    Dot,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Text => "text",
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Dot => "dot",
        }
    }
}

/// How to read the main input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputKind {
    /// IR if the file defines a function, otherwise an annotated trace.
    #[default]
    Auto,
    Ir,
    /// Annotated static trace text.
    Trace,
    /// Newline-delimited dynamic address trace.
    Dynamic,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub function: Option<String>,
    pub probs: Option<PathBuf>,
    /// `None` picks the command's default.
    pub format: Option<Format>,
    /// Loop overrides: nesting paths (`0.1=20`) for traces, branch keys
    /// (`T_4_5=100`) for CFG interpretation.
    pub bounds: Option<String>,
    pub unroll_cap: u64,
    pub output: Option<PathBuf>,
    pub input_kind: InputKind,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        RunConfig {
            input: input.into(),
            function: None,
            probs: None,
            format: None,
            bounds: None,
            unroll_cap: DEFAULT_UNROLL_CAP,
            output: None,
            input_kind: InputKind::Auto,
        }
    }

    pub fn with_probs(mut self, probs: impl Into<PathBuf>) -> Self {
        self.probs = Some(probs.into());
        self
    }

    pub fn with_format(mut self, format: Format) -> Self {
        self.format = Some(format);
        self
    }

    pub fn with_bounds(mut self, bounds: impl Into<String>) -> Self {
        self.bounds = Some(bounds.into());
        self
    }

    fn format(&self, allowed: &[Format]) -> Result<Format, CliError> {
        let chosen = self.format.unwrap_or(allowed[0]);
        if allowed.contains(&chosen) {
            Ok(chosen)
        } else {
            let names: Vec<&str> = allowed.iter().map(|f| f.name()).collect();
            Err(CliError::Config(format!(
                "format `{}` is not available here; use one of: {}",
                chosen.name(),
                names.join(", ")
            )))
        }
    }

    fn kind(&self, text: &str) -> InputKind {
        match self.input_kind {
            InputKind::Auto if looks_like_ir(text) => InputKind::Ir,
            InputKind::Auto => InputKind::Trace,
            other => other,
        }
    }

    fn probs(&self) -> Result<ProbConfig, CliError> {
        let path = self
            .probs
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs --probs PATH".into()))?;
        lift(parse_config(&read(path)?))
    }

    fn overrides(&self) -> Result<LoopOverrides, CliError> {
        lift(LoopOverrides::parse(self.bounds.as_deref().unwrap_or("")))
    }
}

fn looks_like_ir(text: &str) -> bool {
    text.lines().any(|l| l.starts_with("define "))
}

/// Reads a file, or standard input for `-` (read once and cached).
pub fn read(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        static STDIN: OnceLock<Result<String, String>> = OnceLock::new();
        return STDIN
            .get_or_init(|| std::io::read_to_string(std::io::stdin()).map_err(|e| e.to_string()))
            .clone()
            .map_err(|e| CliError::Config(format!("cannot read standard input: {e}")));
    }
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Writes `text` to `-o` or stdout.
pub fn emit(rc: &RunConfig, text: &str) -> Result<(), CliError> {
    match &rc.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display()))),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Internal(format!("cannot write output: {e}")))
        }
    }
}

fn load_cfg(rc: &RunConfig) -> Result<Cfg, CliError> {
    let text = read(&rc.input)?;
    let module = lift(parse_ir(&text, rc.function.as_deref()))?;
    let func = lift(module.select(rc.function.as_deref()))?;
    lift(build_function_cfg(func))
}

fn solved(rc: &RunConfig) -> Result<(Cfg, ExecCounts), CliError> {
    let cfg = lift(attach_probabilities(&load_cfg(rc)?, &rc.probs()?))?;
    let counts = lift(solve_counts(&cfg))?;
    Ok((cfg, counts))
}

fn json_text(value: serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(&value).expect("JSON values serialize");
    s.push('\n');
    s
}

pub fn cmd_trace(rc: &RunConfig) -> Result<String, CliError> {
    let format = rc.format(&[Format::Text, Format::Json])?;
    let module = lift(parse_ir(&read(&rc.input)?, rc.function.as_deref()))?;
    Ok(match format {
        Format::Json => json_text(serde_json::to_value(&module).map_err(|e| CliError::Internal(e.to_string()))?),
        _ => dump_static_trace(&module),
    })
}

/// DOT graph (with counts and edge probabilities when `--probs` is given),
/// or the probability template with `--format text`. `template_out`
/// additionally writes the template to a file.
pub fn cmd_cfg(rc: &RunConfig, template_out: Option<&Path>) -> Result<String, CliError> {
    let format = rc.format(&[Format::Dot, Format::Text])?;
    let cfg = load_cfg(rc)?;
    let template = lift(emit_template(&cfg))?;
    if let Some(path) = template_out {
        fs::write(path, &template)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
    }
    if format == Format::Text {
        return Ok(template);
    }
    if rc.probs.is_some() {
        let (cfg, counts) = solved(rc)?;
        Ok(emit_dot(&cfg, Some(&counts)))
    } else {
        Ok(emit_dot(&cfg, None))
    }
}

pub fn cmd_template(rc: &RunConfig) -> Result<String, CliError> {
    rc.format(&[Format::Text])?;
    lift(emit_template(&load_cfg(rc)?))
}

pub fn cmd_counts(rc: &RunConfig) -> Result<String, CliError> {
    let format = rc.format(&[Format::Text, Format::Csv, Format::Json])?;
    let (cfg, counts) = solved(rc)?;
    let report = characterize(&cfg, &counts);
    Ok(match format {
        Format::Csv => report.to_csv(),
        Format::Json => {
            let mut v = report.to_json();
            v["unreachable"] = serde_json::json!(counts.unreachable);
            json_text(v)
        }
        _ => {
            let mut out = report.to_text();
            out.push('\n');
            out.push_str(&format_apriori(&counts));
            out
        }
    })
}

fn static_trace(rc: &RunConfig) -> Result<(AnnotatedTrace, Option<String>), CliError> {
    let text = read(&rc.input)?;
    match rc.kind(&text) {
        InputKind::Ir => {
            let (cfg, counts) = solved(rc)?;
            let path = lift(max_prob_path(&cfg))?;
            lift(check_loop_counts(&path, &cfg, &counts))?;
            Ok((expand_memory_trace(&path, &cfg), Some(path.to_string())))
        }
        InputKind::Trace => Ok((lift(parse_trace(&text))?, None)),
        InputKind::Dynamic | InputKind::Auto => Err(CliError::Config(
            "a static trace needs IR or annotated-trace input".into(),
        )),
    }
}

pub fn cmd_memtrace(rc: &RunConfig) -> Result<String, CliError> {
    let format = rc.format(&[Format::Text, Format::Json])?;
    let (trace, path) = static_trace(rc)?;
    let trace = lift(apply_overrides(&trace, &rc.overrides()?))?;
    Ok(match format {
        Format::Json => json_text(serde_json::json!({
            "path": path,
            "block_path": trace.block_path,
            "trace": trace.render(true),
            "accesses": trace.access_count(),
            "unrolled_length": trace.unrolled_len(),
        })),
        _ => format!("{}\n", trace.render(true)),
    })
}

fn profile_text(profile: &ReuseProfile, format: Format) -> String {
    match format {
        Format::Json => json_text(profile.to_json()),
        _ => profile.to_csv(),
    }
}

pub fn static_profile(rc: &RunConfig) -> Result<ReuseProfile, CliError> {
    let (trace, _) = static_trace(rc)?;
    let trace = lift(apply_overrides(&trace, &rc.overrides()?))?;
    lift(calc_reuse_profile(&trace))
}

pub fn cmd_reuse(rc: &RunConfig) -> Result<String, CliError> {
    let format = rc.format(&[Format::Csv, Format::Json, Format::Text])?;
    Ok(profile_text(&static_profile(rc)?, format))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleSource {
    /// Unroll the annotated static trace.
    #[default]
    Trace,
    /// Interpret the CFG with concrete loop bounds.
    Cfg,
}

#[derive(Debug, Clone, Default)]
pub struct OracleOptions {
    pub source: OracleSource,
    /// Process the stream in this many chunks in parallel.
    pub parallel: Option<usize>,
    /// Also write the dynamic trace, one address per line.
    pub dump: Option<PathBuf>,
}

pub fn oracle_profile(rc: &RunConfig, opts: &OracleOptions) -> Result<ReuseProfile, CliError> {
    let text = read(&rc.input)?;
    let kind = rc.kind(&text);
    let materialize = opts.parallel.is_some() || opts.dump.is_some();
    let dynamic = match (kind, opts.source) {
        (InputKind::Dynamic, _) => Some(lift(DynamicTrace::from_text(&text))?),
        (InputKind::Ir, OracleSource::Cfg) => {
            let cfg = load_cfg(rc)?;
            let mut bounds = match &rc.probs {
                Some(_) => lift(LoopBounds::from_config(&cfg, &rc.probs()?))?,
                None => LoopBounds::default(),
            };
            bounds.extend(&lift(LoopBounds::parse(rc.bounds.as_deref().unwrap_or("")))?);
            if !materialize {
                return lift(oracle::interpret_profile(&cfg, &bounds, rc.unroll_cap));
            }
            Some(lift(oracle::interpret_trace(&cfg, &bounds, rc.unroll_cap))?)
        }
        (InputKind::Trace, OracleSource::Cfg) => {
            return Err(CliError::Config("--source cfg needs IR input".into()));
        }
        _ => {
            let (trace, _) = static_trace(rc)?;
            let overrides = rc.overrides()?;
            if !materialize {
                return lift(oracle::oracle_profile(&trace, &overrides, rc.unroll_cap));
            }
            Some(lift(oracle::unroll(&trace, &overrides, rc.unroll_cap))?)
        }
    };
    let dynamic = dynamic.expect("every branch yields a trace");
    if let Some(path) = &opts.dump {
        fs::write(path, dynamic.to_text())
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(match opts.parallel {
        Some(chunks) => stack::parallel_reuse_profile(&dynamic.addresses, chunks),
        None => stack::exact_reuse_profile(&dynamic.addresses),
    })
}

pub fn cmd_oracle(rc: &RunConfig, opts: &OracleOptions) -> Result<String, CliError> {
    let format = rc.format(&[Format::Csv, Format::Json, Format::Text])?;
    Ok(profile_text(&oracle_profile(rc, opts)?, format))
}

pub fn cmd_compare(a: &Path, b: &Path, format: Option<Format>) -> Result<(String, ProfileComparison), CliError> {
    let format = format.unwrap_or(Format::Text);
    if !matches!(format, Format::Text | Format::Json) {
        return Err(CliError::Config("compare supports text or json output".into()));
    }
    let pa = lift(ReuseProfile::parse(&read(a)?))?;
    let pb = lift(ReuseProfile::parse(&read(b)?))?;
    let cmp = compare_profiles(&pa, &pb);
    let text = match format {
        Format::Json => json_text(cmp.to_json()),
        _ => cmp.to_text(),
    };
    Ok((text, cmp))
}

/// Solved counts and the characterization for callers that want structures
/// rather than text.
pub fn characterization(rc: &RunConfig) -> Result<reuse_scope::CharacterizationReport, CliError> {
    let (cfg, counts) = solved(rc)?;
    Ok(characterize(&cfg, &counts))
}
