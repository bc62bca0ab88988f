#![allow(dead_code)]

use std::path::PathBuf;

use reuse_scope::probs::{ProbConfig, ProbKey};
use reuse_scope::rational::ratio;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Config giving each `(line, col)` branch exit probability `1/(n+1)`.
pub fn loop_config(loops: &[((u32, u32), i64)]) -> ProbConfig {
    let mut cfg = ProbConfig::default();
    for ((line, col), n) in loops {
        cfg.insert(ProbKey::new(*line, *col), ratio(1, n + 1));
    }
    cfg
}

/// Running-example branch keys: outer, middle, inner loop.
pub const FIG2_KEYS: [(u32, u32); 3] = [(4, 5), (6, 9), (8, 13)];

pub fn fig2_config(n1: i64, n2: i64, n3: i64) -> ProbConfig {
    loop_config(&[(FIG2_KEYS[0], n1), (FIG2_KEYS[1], n2), (FIG2_KEYS[2], n3)])
}

pub struct Kernel {
    pub file: &'static str,
    pub function: &'static str,
    pub loops: &'static [((u32, u32), i64)],
    /// Extra branches as `(key, numerator, denominator)` of the false edge.
    pub branches: &'static [((u32, u32), i64, i64)],
}

impl Kernel {
    pub fn config(&self) -> ProbConfig {
        let mut cfg = loop_config(self.loops);
        for ((line, col), num, den) in self.branches {
            cfg.insert(ProbKey::new(*line, *col), ratio(*num, *den));
        }
        cfg
    }

    pub fn ir(&self) -> String {
        fixture(self.file)
    }
}

pub const KERNELS: &[Kernel] = &[
    Kernel {
        file: "fig2.ll",
        function: "main",
        loops: &[((4, 5), 100), ((6, 9), 200), ((8, 13), 300)],
        branches: &[],
    },
    Kernel {
        file: "gemm.ll",
        function: "gemm",
        loops: &[((6, 5), 20), ((7, 9), 40), ((9, 9), 30), ((10, 13), 40)],
        branches: &[],
    },
    Kernel {
        file: "atax.ll",
        function: "atax",
        loops: &[((4, 5), 8), ((6, 5), 6), ((8, 9), 8), ((10, 9), 8)],
        branches: &[],
    },
    Kernel {
        file: "jacobi1d.ll",
        function: "jacobi1d",
        loops: &[((5, 5), 10), ((6, 9), 98), ((8, 9), 98)],
        branches: &[],
    },
    Kernel {
        file: "scale.ll",
        function: "scale",
        // The do-while body runs once more than its condition continues.
        loops: &[((8, 5), 63), ((9, 5), 64)],
        branches: &[],
    },
    Kernel {
        file: "branchy.ll",
        function: "branchy",
        loops: &[((4, 5), 64)],
        branches: &[((5, 13), 1, 2)],
    },
];
