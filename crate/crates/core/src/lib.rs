//! Static instruction-mix and reuse-distance analysis of unoptimized LLVM IR
//! kernels.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`parse_ir`] reads `clang -g -O0` textual IR into a [`StaticTrace`].
//! 2. [`build_cfg`] derives the basic-block graph with operation tallies and
//!    per-block memory accesses.
//! 3. [`emit_template`] / [`parse_config`] handle the branch-probability file.
//! 4. [`attach_probabilities`] + [`solve_counts`] give exact expected block
//!    counts; [`characterize`] scales the tallies into a whole-kernel report.
//! 5. [`max_prob_path`] + [`expand_memory_trace`] produce the loop-annotated
//!    static memory trace.
//! 6. [`calc_reuse_profile`] predicts the reuse-distance histogram.
//!
//! The [`oracle`] module computes the same histograms from fully unrolled or
//! interpreted executions for validation.

pub mod cfg;
pub mod counts;
pub mod ir;
pub mod loops;
pub mod oracle;
pub mod probs;
pub mod rational;
pub mod reuse;
pub mod trace;

use thiserror::Error;

pub use cfg::{
    build_cfg, build_function_cfg, emit_dot, AccessKind, AccessOp, Cfg, CfgEdge, CfgError, CfgNode,
    IndexTerm, MemAccess, OpTally, Polarity,
};
pub use counts::{
    attach_probabilities, characterize, solve_counts, CharacterizationReport, CountError, ExecCounts,
};
pub use ir::{dump_static_trace, parse_ir, ParseError, SourceLoc, StaticTrace};
pub use oracle::{
    exact_reuse_profile, interpret_counts, interpret_profile, interpret_trace, oracle_profile, unroll,
    DynamicTrace, LoopBounds, LoopOverrides, OracleError,
};
pub use probs::{emit_template, parse_config, ProbConfig, ProbError, ProbKey};
pub use reuse::{calc_reuse_profile, compare_profiles, merge_profiles, ProfileComparison, ReuseError, ReuseProfile};
pub use trace::{
    expand_memory_trace, max_prob_path, parse_trace, AnnotatedPath, AnnotatedTrace, TraceError, TraceToken,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Count(#[from] CountError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Reuse(#[from] ReuseError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Everything the static path derives from one function.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub cfg: Cfg,
    pub counts: ExecCounts,
    pub report: CharacterizationReport,
    pub path: AnnotatedPath,
    pub trace: AnnotatedTrace,
    pub profile: ReuseProfile,
}

/// Runs the static stages on IR text with a probability config, checking
/// path loop counts against the solved block counts.
pub fn analyze(ir_text: &str, function: Option<&str>, config: &ProbConfig) -> Result<Analysis, Error> {
    let module = parse_ir(ir_text, function)?;
    let func = module.select(function)?;
    let cfg = attach_probabilities(&build_function_cfg(func)?, config)?;
    log::debug!("{}: {} blocks, {} edges", cfg.function, cfg.nodes.len(), cfg.edges.len());
    let counts = solve_counts(&cfg)?;
    let report = characterize(&cfg, &counts);
    let path = max_prob_path(&cfg)?;
    trace::check_loop_counts(&path, &cfg, &counts)?;
    let trace = expand_memory_trace(&path, &cfg);
    log::debug!("static trace: {} tokens, depth {}", trace.tokens.len(), trace.max_depth());
    let profile = calc_reuse_profile(&trace)?;
    Ok(Analysis {
        cfg,
        counts,
        report,
        path,
        trace,
        profile,
    })
}
