//! Shared inputs for the benchmarks.

use reuse_scope::probs::{ProbConfig, ProbKey};
use reuse_scope::rational::ratio;
use reuse_scope::{parse_trace, AnnotatedTrace};

/// The three-deep loop nest used throughout the tests.
pub const FIG2_IR: &str = include_str!("../../core/tests/fixtures/fig2.ll");
pub const GEMM_IR: &str = include_str!("../../core/tests/fixtures/gemm.ll");

/// Loop exit probabilities `1/(n+1)` for the outer, middle and inner loop.
pub fn fig2_config(n1: i64, n2: i64, n3: i64) -> ProbConfig {
    let mut cfg = ProbConfig::default();
    for ((line, col), n) in [((4, 5), n1), ((6, 9), n2), ((8, 13), n3)] {
        cfg.insert(ProbKey::new(line, col), ratio(1, n + 1));
    }
    cfg
}

pub fn gemm_config() -> ProbConfig {
    let mut cfg = ProbConfig::default();
    for ((line, col), n) in [((6, 5), 20), ((7, 9), 40), ((9, 9), 30), ((10, 13), 40)] {
        cfg.insert(ProbKey::new(line, col), ratio(1, n + 1));
    }
    cfg
}

/// Scalar trace of `depth` nested loops of `count` iterations, each level
/// touching `width` symbols.
pub fn nested_trace(depth: usize, count: u64, width: usize) -> AnnotatedTrace {
    let mut parts = Vec::new();
    for level in 0..depth {
        parts.push(format!("[{count}"));
        parts.extend((0..width).map(|s| format!("v{level}_{s}")));
    }
    parts.extend(std::iter::repeat_n("]".to_string(), depth));
    parse_trace(&parts.join(" ")).expect("generated trace is balanced")
}
