//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{fig2_config, fixture, fixture_path, KERNELS};
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reuse_scope::counts::inflow;
use reuse_scope::oracle::{self, LoopBounds, LoopOverrides, DEFAULT_UNROLL_CAP};
use reuse_scope::rational::int;
use reuse_scope::*;
use reuse_scope_cli::{cmd_reuse, RunConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn min_time<T>(runs: usize, mut f: impl FnMut() -> T) -> Duration {
    (0..runs)
        .map(|_| {
            let start = Instant::now();
            std::hint::black_box(f());
            start.elapsed()
        })
        .min()
        .expect("at least one run")
}

fn fig2(n1: i64, n2: i64, n3: i64) -> Result<Analysis, String> {
    analyze(&fixture("fig2.ll"), None, &fig2_config(n1, n2, n3)).map_err(|e| e.to_string())
}

fn tree_oracle(trace: &AnnotatedTrace) -> Result<ReuseProfile, String> {
    oracle::oracle_profile(trace, &LoopOverrides::default(), DEFAULT_UNROLL_CAP).map_err(|e| e.to_string())
}

fn weighted_accesses(a: &Analysis) -> BigRational {
    a.cfg
        .nodes
        .iter()
        .map(|(name, node)| int(node.accesses.len() as u64) * &a.counts.n[name.as_str()])
        .sum()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let small = fig2(10, 20, 30)?;
    let oracle_small = tree_oracle(&small.trace)?;
    let cmp = compare_profiles(&small.profile, &oracle_small);
    let small_time = start.elapsed();
    ensure(cmp.counts_equal && cmp.tv_distance == int(0), || {
        format!("(10,20,30) differs: {}", cmp.to_text().replace('\n', " "))
    })?;
    ensure(small_time < Duration::from_secs(5), || format!("(10,20,30) took {small_time:?}"))?;

    let large = fig2(100, 200, 300)?;
    let start = Instant::now();
    let oracle_large = tree_oracle(&large.trace)?;
    let oracle_time = start.elapsed();
    ensure(large.profile == oracle_large, || "(100,200,300) profiles differ".into())?;
    ensure(oracle_time < Duration::from_secs(300), || format!("oracle took {oracle_time:?}"))?;

    let ir = fixture("fig2.ll");
    let (cs, cl) = (fig2_config(10, 20, 30), fig2_config(100, 200, 300));
    let t_small = min_time(15, || analyze(&ir, None, &cs).unwrap());
    let t_large = min_time(15, || analyze(&ir, None, &cl).unwrap());
    let ratio = t_large.as_secs_f64() / t_small.as_secs_f64();
    ensure(ratio < 2.0, || format!("static path slowed {ratio:.2}x"))?;
    Ok(format!(
        "TV 0 at (10,20,30) in {small_time:.2?}; {} accesses equal at (100,200,300), oracle {oracle_time:.2?}, static ratio {ratio:.2}",
        oracle_large.total()
    ))
}

fn criterion_2() -> Outcome {
    let a = fig2(100, 200, 300)?;
    let expect = [("entry", 1u64), ("for.body", 100), ("for.body3", 20_000), ("for.body7", 6_000_000)];
    for (block, n) in expect {
        ensure(a.counts.n[block] == int(n), || format!("N({block}) = {}", a.counts.n[block]))?;
    }
    let returns: BigRational = a
        .cfg
        .nodes
        .values()
        .filter(|n| n.is_return)
        .map(|n| a.counts.n[n.name.as_str()].clone())
        .sum();
    ensure(returns == int(1), || format!("return mass {returns}"))?;
    let bounds = LoopBounds::from_config(&a.cfg, &fig2_config(100, 200, 300)).map_err(|e| e.to_string())?;
    let run = oracle::interpret_counts(&a.cfg, &bounds, DEFAULT_UNROLL_CAP).map_err(|e| e.to_string())?;
    for (block, n) in &run.block_counts {
        ensure(a.counts.n[block.as_str()] == int(*n), || format!("{block}: interpreter ran {n}"))?;
    }
    Ok("N = 1, 100, 20000, 6000000; return mass 1; interpreter agrees".into())
}

fn criterion_3() -> Outcome {
    for k in KERNELS {
        let a = analyze(&k.ir(), Some(k.function), &k.config()).map_err(|e| format!("{}: {e}", k.file))?;
        let bounds = LoopBounds::from_config(&a.cfg, &k.config()).map_err(|e| e.to_string())?;
        let run = oracle::interpret_counts(&a.cfg, &bounds, DEFAULT_UNROLL_CAP).map_err(|e| e.to_string())?;
        let expected = run.totals.map(|v| int(*v));
        ensure(a.report.totals == expected, || format!("{}: totals differ", k.file))?;
    }
    Ok(format!("{} kernels match the interpreter", KERNELS.len()))
}

/// Bracket-balanced scalar trace text over `alphabet` symbols.
fn random_trace(rng: &mut ChaCha8Rng, alphabet: u32, max_depth: usize, max_count: u64, max_len: usize) -> String {
    let mut tokens: Vec<String> = Vec::new();
    let mut depth = 0;
    while tokens.len() + depth < max_len {
        let roll: f64 = rng.gen();
        if depth < max_depth && roll < 0.15 && tokens.len() + depth + 2 < max_len {
            tokens.push(format!("[{}", rng.gen_range(1..=max_count)));
            depth += 1;
        } else if depth > 0 && roll < 0.3 {
            tokens.push("]".into());
            depth -= 1;
        } else {
            tokens.push(format!("s{}", rng.gen_range(0..alphabet)));
        }
    }
    tokens.extend(std::iter::repeat_n("]".to_string(), depth));
    tokens.join(" ")
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..1000 {
        let alphabet = rng.gen_range(1..=12);
        let depth = rng.gen_range(0..=3);
        let count = rng.gen_range(1..=8);
        let len = rng.gen_range(1..=60);
        let text = random_trace(&mut rng, alphabet, depth, count, len);
        let trace = parse_trace(&text).map_err(|e| format!("case {case}: {e}"))?;
        let predicted = calc_reuse_profile(&trace).map_err(|e| e.to_string())?;
        let actual = tree_oracle(&trace)?;
        ensure(predicted == actual, || format!("case {case} differs: {text}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 traces equal in {elapsed:.2?}"))
}

fn criterion_5() -> Outcome {
    let mut checked = 0;
    let mut analyses = vec![fig2(10, 20, 30)?, fig2(3, 1, 2)?];
    for k in KERNELS {
        analyses.push(analyze(&k.ir(), Some(k.function), &k.config()).map_err(|e| e.to_string())?);
    }
    for a in &analyses {
        let length = a.trace.unrolled_len().ok_or("length overflow")?;
        let weighted = weighted_accesses(a);
        ensure(a.profile.total() == length && int(length) == weighted, || {
            format!("{}: profile {} unrolled {length} weighted {weighted}", a.cfg.function, a.profile.total())
        })?;
        ensure(tree_oracle(&a.trace)?.total() == length, || format!("{}: oracle length", a.cfg.function))?;
        checked += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let trace = parse_trace(&random_trace(&mut rng, 12, 3, 8, 60)).map_err(|e| e.to_string())?;
        let total = calc_reuse_profile(&trace).map_err(|e| e.to_string())?.total();
        ensure(Some(total) == trace.unrolled_len(), || "random trace mass differs".into())?;
        checked += 1;
    }
    Ok(format!("{checked} traces conserve mass"))
}

fn write_probs(dir: &Path, name: &str, config: &ProbConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, config.format()).unwrap();
    path
}

fn criterion_6() -> Outcome {
    let small = fig2(10, 20, 30)?;
    let large = fig2(10_000, 20_000, 30_000)?;
    ensure(small.trace.shape() == large.trace.shape(), || "trace shapes differ".into())?;
    ensure(small.path.blocks() == large.path.blocks(), || "paths differ".into())?;

    let dir = std::env::temp_dir().join(format!("reuse-scope-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let run = |probs: PathBuf| RunConfig::new(fixture_path("fig2.ll")).with_probs(probs);
    let rs = run(write_probs(&dir, "small.txt", &fig2_config(10, 20, 30)));
    let rl = run(write_probs(&dir, "large.txt", &fig2_config(10_000, 20_000, 30_000)));
    cmd_reuse(&rs).map_err(|e| e.to_string())?;
    cmd_reuse(&rl).map_err(|e| e.to_string())?;
    let t_small = min_time(15, || cmd_reuse(&rs).unwrap());
    let t_large = min_time(15, || cmd_reuse(&rl).unwrap());
    let _ = std::fs::remove_dir_all(&dir);
    let ratio = t_large.as_secs_f64() / t_small.as_secs_f64();
    ensure(ratio < 2.0, || format!("cmd_reuse slowed {ratio:.2}x"))?;
    Ok(format!("shapes identical; cmd_reuse {t_small:.2?} vs {t_large:.2?} ({ratio:.2}x)"))
}

fn criterion_7() -> Outcome {
    let mut analyses = Vec::new();
    for (n1, n2, n3) in [(10, 20, 30), (100, 200, 300), (1, 1, 1), (7, 3, 11)] {
        analyses.push(fig2(n1, n2, n3)?);
    }
    for k in KERNELS {
        analyses.push(analyze(&k.ir(), Some(k.function), &k.config()).map_err(|e| e.to_string())?);
    }
    for a in &analyses {
        ensure(a.counts.all_integral(), || format!("{}: fractional count", a.cfg.function))?;
        for block in a.cfg.nodes.keys().filter(|b| **b != a.cfg.entry) {
            ensure(inflow(&a.cfg, &a.counts, block) == a.counts.n[block.as_str()], || {
                format!("{}: flow not conserved at {block}", a.cfg.function)
            })?;
        }
    }
    Ok(format!("{} CFGs integral and conserved", analyses.len()))
}

fn criterion_8() -> Outcome {
    for n in [1u64, 2, 17, 500] {
        let varying = parse_trace(&format!("[{n}~i arr~i ]")).map_err(|e| e.to_string())?;
        let p = calc_reuse_profile(&varying).map_err(|e| e.to_string())?;
        ensure(p.inf_count == n && p.total() == n, || format!("n={n}: arr~i gives {:?}", p))?;
        let dynamic = oracle::unroll(&varying, &LoopOverrides::default(), DEFAULT_UNROLL_CAP).map_err(|e| e.to_string())?;
        ensure(dynamic.interner.len() as u64 == n, || format!("n={n}: oracle saw {} addresses", dynamic.interner.len()))?;
        ensure(tree_oracle(&varying)? == p, || format!("n={n}: oracle disagrees on arr~i"))?;

        let fixed = parse_trace(&format!("[{n}~i arr~5 ]")).map_err(|e| e.to_string())?;
        let p = calc_reuse_profile(&fixed).map_err(|e| e.to_string())?;
        let mut expected = ReuseProfile::default();
        expected.add(None, 1);
        expected.add(Some(0), n - 1);
        ensure(p == expected, || format!("n={n}: arr~5 gives {:?}", p))?;
        ensure(tree_oracle(&fixed)? == p, || format!("n={n}: oracle disagrees on arr~5"))?;
    }
    Ok("varying subscript all cold; constant subscript {inf:1, 0:n-1}; oracle agrees".into())
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let mut failed = 0;
    for (n, check) in criteria {
        match check() {
            Ok(detail) => println!("criterion {n}: PASS {detail}"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n}: FAIL {reason}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
