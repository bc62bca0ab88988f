//! Expected basic-block execution counts from branch probabilities, and the
//! whole-kernel instruction mix derived from them.
//!
//! Counts solve the flow balance system
//!
//! ```text
//! N_entry = 1
//! N_j     = sum over predecessors i of P(i -> j) * N_i     (j != entry)
//! ```
//!
//! exactly over the rationals. Because the out-probabilities of every block sum
//! to one, inflow equals outflow at every block, so this is the same solution
//! set as equating predecessor inflow with successor outflow.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::cfg::{Cfg, OpTally, Polarity};
use crate::probs::{branch_keys, ProbConfig, ProbError, ProbKey};
use crate::rational::{format_exact, format_sig, SIG_DIGITS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CountError {
    #[error("no probability given for branch T_{line}_{col}")]
    MissingProbability { line: u32, col: u32 },
    #[error("probability key T_{line}_{col} does not name a conditional branch")]
    UnknownKey { line: u32, col: u32 },
    #[error(transparent)]
    Branch(#[from] ProbError),
    #[error("edge {from} -> {to} has no probability attached")]
    UnlabeledEdge { from: String, to: String },
    #[error("entry block `{0}` has incoming edges; kernels must enter exactly once")]
    EntryInLoop(String),
    #[error("balance equations have no unique solution: {0}")]
    SingularSystem(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecCounts {
    /// Expected executions per block, in function block order.
    pub n: IndexMap<String, BigRational>,
    /// `N_i / sum_j N_j`.
    pub apriori: IndexMap<String, BigRational>,
    /// Blocks no positive-probability path reaches; their count is zero.
    pub unreachable: Vec<String>,
}

impl ExecCounts {
    pub fn get(&self, block: &str) -> Option<&BigRational> {
        self.n.get(block)
    }

    /// True when every count has denominator one.
    pub fn all_integral(&self) -> bool {
        self.n.values().all(|v| v.is_integer())
    }
}

/// Labels each edge with its probability: `p` on the false edge of a branch
/// keyed `T_line_col`, `1 - p` on its true edge, `1` on unconditional edges.
pub fn attach_probabilities(cfg: &Cfg, config: &ProbConfig) -> Result<Cfg, CountError> {
    let keys = branch_keys(cfg)?;
    let known: HashSet<ProbKey> = keys.iter().map(|(k, _, _)| *k).collect();
    if let Some(extra) = config.entries.keys().find(|k| !known.contains(k)) {
        return Err(CountError::UnknownKey {
            line: extra.line,
            col: extra.col,
        });
    }
    let mut out = cfg.clone();
    for edge in &mut out.edges {
        edge.prob = Some(match edge.polarity {
            Polarity::Unconditional => BigRational::one(),
            pol => {
                let key = ProbKey::from(edge.branch_loc);
                let p = config.get(key).ok_or(CountError::MissingProbability {
                    line: key.line,
                    col: key.col,
                })?;
                if pol == Polarity::CondFalse {
                    p.clone()
                } else {
                    BigRational::one() - p
                }
            }
        });
    }
    Ok(out)
}

pub fn solve_counts(cfg: &Cfg) -> Result<ExecCounts, CountError> {
    for edge in &cfg.edges {
        if edge.prob.is_none() {
            return Err(CountError::UnlabeledEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
            });
        }
    }
    if cfg.in_edges(&cfg.entry).next().is_some() {
        return Err(CountError::EntryInLoop(cfg.entry.clone()));
    }

    let reachable = positive_reach(cfg);
    let unknowns: Vec<&str> = cfg
        .nodes
        .keys()
        .map(String::as_str)
        .filter(|b| reachable.contains(b))
        .collect();
    let index: IndexMap<&str, usize> = unknowns.iter().enumerate().map(|(i, b)| (*b, i)).collect();
    let size = unknowns.len();

    let mut matrix = vec![vec![BigRational::zero(); size]; size];
    let mut rhs = vec![BigRational::zero(); size];
    for (row, block) in unknowns.iter().enumerate() {
        matrix[row][row] = BigRational::one();
        if *block == cfg.entry {
            rhs[row] = BigRational::one();
            continue;
        }
        for edge in cfg.in_edges(block) {
            if let Some(&col) = index.get(edge.from.as_str()) {
                matrix[row][col] -= edge.prob.as_ref().expect("checked above");
            }
        }
    }
    let solution = gauss_solve(matrix, rhs, &unknowns)?;

    let mut n = IndexMap::new();
    let mut unreachable = Vec::new();
    for name in cfg.nodes.keys() {
        match index.get(name.as_str()) {
            Some(&i) => {
                n.insert(name.clone(), solution[i].clone());
            }
            None => {
                log::warn!("block `{name}` is unreachable with the given probabilities; N = 0");
                unreachable.push(name.clone());
                n.insert(name.clone(), BigRational::zero());
            }
        }
    }
    let total: BigRational = n.values().sum();
    let apriori = n
        .iter()
        .map(|(k, v)| (k.clone(), v / &total))
        .collect();
    Ok(ExecCounts {
        n,
        apriori,
        unreachable,
    })
}

/// Blocks reachable from the entry along edges of positive probability.
fn positive_reach(cfg: &Cfg) -> HashSet<&str> {
    let mut seen = HashSet::from([cfg.entry.as_str()]);
    let mut queue = VecDeque::from([cfg.entry.as_str()]);
    while let Some(block) = queue.pop_front() {
        for edge in cfg.out_edges(block) {
            let positive = edge.prob.as_ref().is_some_and(|p| p.is_positive());
            if positive && seen.insert(edge.to.as_str()) {
                queue.push_back(edge.to.as_str());
            }
        }
    }
    seen
}

fn bit_size(value: &BigRational) -> u64 {
    value.numer().bits() + value.denom().bits()
}

/// Gaussian elimination over the rationals. Among the nonzero candidates in
/// a column the pivot with the smallest numerator+denominator bit length is
/// taken, which keeps intermediate growth down.
fn gauss_solve(
    mut a: Vec<Vec<BigRational>>,
    mut b: Vec<BigRational>,
    names: &[&str],
) -> Result<Vec<BigRational>, CountError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .filter(|&r| !a[r][col].is_zero())
            .min_by_key(|&r| bit_size(&a[r][col]))
            .ok_or_else(|| {
                CountError::SingularSystem(format!(
                    "count of block `{}` is undetermined (a cycle that is never left?)",
                    names[col]
                ))
            })?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = a[col][col].recip();
        let pivot_row = a[col].clone();
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] * &inv;
            for (dst, src) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= &factor * src;
            }
            let delta = &factor * &b[col];
            b[r] -= delta;
        }
    }
    Ok((0..n).map(|i| &b[i] / &a[i][i]).collect())
}

/// `sum over predecessors i of P(i -> block) * N_i`.
pub fn inflow(cfg: &Cfg, counts: &ExecCounts, block: &str) -> BigRational {
    cfg.in_edges(block)
        .map(|e| e.prob.clone().unwrap_or_default() * &counts.n[e.from.as_str()])
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharacterizationReport {
    pub per_block: IndexMap<String, OpTally<BigRational>>,
    pub counts: IndexMap<String, BigRational>,
    pub totals: OpTally<BigRational>,
}

pub fn characterize(cfg: &Cfg, counts: &ExecCounts) -> CharacterizationReport {
    let mut per_block = IndexMap::new();
    let mut totals: OpTally<BigRational> = OpTally::default().map(|_: &u64| BigRational::zero());
    for (name, node) in &cfg.nodes {
        let n = counts.n.get(name).cloned().unwrap_or_default();
        let scaled = node.tally.map(|v| BigRational::from_integer(BigInt::from(*v)) * &n);
        totals.add_assign_ref(&scaled);
        per_block.insert(name.clone(), scaled);
    }
    CharacterizationReport {
        per_block,
        counts: counts.n.clone(),
        totals,
    }
}

pub const REPORT_HEADER: &str = "block,loads,stores,mem_bytes,cond_br,uncond_br,flops,int_ops,other,N";

impl CharacterizationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        let row = |out: &mut String, name: &str, tally: &OpTally<BigRational>, n: &BigRational| {
            let cols: Vec<String> = tally.columns().iter().map(|v| format_exact(v)).collect();
            let _ = writeln!(out, "{},{},{}", name, cols.join(","), format_exact(n));
        };
        for (name, tally) in &self.per_block {
            row(&mut out, name, tally, &self.counts[name.as_str()]);
        }
        let total_n: BigRational = self.counts.values().sum();
        row(&mut out, "TOTAL", &self.totals, &total_n);
        out
    }

    pub fn to_json(&self) -> Value {
        let tally_json = |t: &OpTally<BigRational>| {
            json!({
                "loads": format_exact(&t.loads),
                "stores": format_exact(&t.stores),
                "mem_bytes": format_exact(&t.mem_bytes),
                "cond_branches": format_exact(&t.cond_branches),
                "uncond_branches": format_exact(&t.uncond_branches),
                "flops": format_exact(&t.flops),
                "int_ops": format_exact(&t.int_ops),
                "other_ops": format_exact(&t.other_ops),
            })
        };
        let mut blocks = Map::new();
        for (name, tally) in &self.per_block {
            let mut entry = tally_json(tally);
            entry["N"] = Value::String(format_exact(&self.counts[name.as_str()]));
            blocks.insert(name.clone(), entry);
        }
        json!({ "per_block": blocks, "totals": tally_json(&self.totals) })
    }

    /// Aligned table for terminals.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = vec![REPORT_HEADER.split(',').map(String::from).collect()];
        for line in self.to_csv().lines().skip(1) {
            rows.push(line.split(',').map(String::from).collect());
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// A-priori probabilities rendered to fixed significant digits.
pub fn format_apriori(counts: &ExecCounts) -> String {
    let mut out = String::from("block,N,P\n");
    for (name, p) in &counts.apriori {
        let _ = writeln!(
            out,
            "{},{},{}",
            name,
            format_exact(&counts.n[name.as_str()]),
            format_sig(p, SIG_DIGITS)
        );
    }
    out
}
