//! Deterministic execution of a CFG with concrete loop bounds, standing in
//! for dynamic instrumentation.
//!
//! Every conditional branch owns a counter. A branch with bound `b` takes its
//! continue edge `b` times in a row, then its other edge once, and resets.
//! For a loop-deciding branch the continue edge is the one staying inside
//! the loop; for any other branch it is the true edge, so a `p = 1/2` branch
//! alternates. With bounds derived from a probability config the relative
//! edge frequencies equal the configured probabilities exactly.

use std::collections::{BTreeMap, HashMap};

use indexmap::IndexMap;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{AddressInterner, CompiledAccess, DynamicTrace, Materializer, OracleError};
use crate::cfg::{Cfg, OpTally, Polarity};
use crate::loops::{loop_deciders, natural_loops};
use crate::probs::{ProbConfig, ProbKey};
use crate::rational::{format_sig, SIG_DIGITS};
use crate::reuse::ReuseProfile;

use super::stack::StackDistanceTracker;

/// Iterations per activation for each branch; `None` never takes the other
/// edge.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoopBounds(pub BTreeMap<ProbKey, Option<u64>>);

impl LoopBounds {
    /// Bounds for the branches of `cfg` from the probabilities in `config`.
    /// A branch whose continue edge has probability `q` and other edge
    /// `1 - q` gets bound `q / (1 - q)`, which must be a whole number.
    pub fn from_config(cfg: &Cfg, config: &ProbConfig) -> Result<LoopBounds, OracleError> {
        let continues = continue_polarities(cfg);
        let mut bounds = BTreeMap::new();
        for (block, _, loc) in cfg.conditional_branches() {
            let key = ProbKey::from(loc);
            let Some(p_false) = config.get(key) else { continue };
            let p_true = BigRational::one() - p_false;
            let (stay, leave) = if continues[block] == Polarity::CondTrue {
                (p_true, p_false.clone())
            } else {
                (p_false.clone(), p_true)
            };
            let bound = if leave.is_zero() {
                None
            } else {
                let ratio = &stay / &leave;
                if !ratio.is_integer() || ratio.is_negative() {
                    return Err(OracleError::NonIntegralBound {
                        key: key.to_string(),
                        ratio: format_sig(&ratio, SIG_DIGITS),
                    });
                }
                Some(u64::try_from(ratio.to_integer()).map_err(|_| OracleError::NonIntegralBound {
                    key: key.to_string(),
                    ratio: format_sig(&ratio, SIG_DIGITS),
                })?)
            };
            bounds.insert(key, bound);
        }
        Ok(LoopBounds(bounds))
    }

    /// Parses `T_<line>_<col>=<bound>` pairs separated by commas.
    pub fn parse(text: &str) -> Result<LoopBounds, OracleError> {
        let mut map = BTreeMap::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || OracleError::BadOverride(part.to_string());
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            let key: ProbKey = k.trim().parse().map_err(|_| bad())?;
            let bound: u64 = v.trim().parse().map_err(|_| bad())?;
            map.insert(key, Some(bound));
        }
        Ok(LoopBounds(map))
    }

    pub fn set(&mut self, key: ProbKey, bound: u64) {
        self.0.insert(key, Some(bound));
    }

    pub fn extend(&mut self, other: &LoopBounds) {
        self.0.extend(other.0.iter().map(|(k, v)| (*k, *v)));
    }
}

/// Per-block polarity of the continue edge.
fn continue_polarities(cfg: &Cfg) -> HashMap<&str, Polarity> {
    let deciders = loop_deciders(cfg);
    let loops = natural_loops(cfg);
    let mut out = HashMap::new();
    for (block, _, _) in cfg.conditional_branches() {
        let mut pol = Polarity::CondTrue;
        if let Some(header) = deciders.get(block) {
            let body = &loops.iter().find(|l| &l.header == header).expect("decider loop").body;
            if let Some(e) = cfg
                .out_edges(block)
                .find(|e| e.polarity != Polarity::Unconditional && body.contains(&e.to))
            {
                pol = e.polarity;
            }
        }
        out.insert(block, pol);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterpResult {
    pub block_counts: IndexMap<String, u64>,
    pub totals: OpTally<u64>,
    /// Memory accesses emitted.
    pub accesses: u64,
}

struct Branch {
    key: ProbKey,
    bound: Option<u64>,
    stay: usize,
    leave: usize,
    /// Control-variable slot set on each decision, for loop deciders.
    var: Option<usize>,
}

enum Exit {
    Return,
    Jump(usize),
    Branch(Branch),
}

struct Block {
    accesses: Vec<CompiledAccess>,
    exit: Exit,
}

fn run(
    cfg: &Cfg,
    bounds: &LoopBounds,
    cap: u64,
    interner: &mut AddressInterner,
    sink: &mut dyn FnMut(u32),
) -> Result<InterpResult, OracleError> {
    let deciders = loop_deciders(cfg);
    let continues = continue_polarities(cfg);
    let vars = deciders
        .keys()
        .filter_map(|b| cfg.nodes[b.as_str()].loop_control_var.as_deref());
    let mut mat = Materializer::new(vars);
    let index = |name: &str| cfg.nodes.get_index_of(name).expect("edge targets exist");

    let mut blocks = Vec::with_capacity(cfg.nodes.len());
    for (name, node) in &cfg.nodes {
        let accesses = node
            .accesses
            .iter()
            .map(|a| CompiledAccess::new(a, &mat, interner))
            .collect();
        let out: Vec<_> = cfg.out_edges(name).collect();
        let exit = if node.is_return {
            Exit::Return
        } else if let [only] = out.as_slice() {
            Exit::Jump(index(&only.to))
        } else if out.len() == 2 {
            let stay_pol = continues[name.as_str()];
            let stay = out.iter().find(|e| e.polarity == stay_pol).expect("two-way branch");
            let leave = out.iter().find(|e| e.polarity != stay_pol).expect("two-way branch");
            let key = ProbKey::from(stay.branch_loc);
            let bound = *bounds.0.get(&key).ok_or(OracleError::UnlabeledEdge {
                from: name.clone(),
                to: stay.to.clone(),
            })?;
            let var = deciders
                .contains_key(name)
                .then(|| node.loop_control_var.as_deref().and_then(|v| mat.slot(v)))
                .flatten();
            Exit::Branch(Branch {
                key,
                bound,
                stay: index(&stay.to),
                leave: index(&leave.to),
                var,
            })
        } else {
            return Err(OracleError::DeadEnd(name.clone()));
        };
        blocks.push(Block { accesses, exit });
    }

    let mut counters: HashMap<ProbKey, u64> = HashMap::new();
    let mut executions = vec![0u64; blocks.len()];
    let mut steps = 0u64;
    let mut accesses = 0u64;
    let mut cur = index(&cfg.entry);
    loop {
        steps += 1;
        if steps > cap {
            return Err(OracleError::NonTerminating(cap));
        }
        executions[cur] += 1;
        let block = &blocks[cur];
        for a in &block.accesses {
            sink(a.address(&mat, interner));
        }
        accesses += block.accesses.len() as u64;
        if accesses > cap {
            return Err(OracleError::Overflow {
                length: format!("more than {cap}"),
                cap,
            });
        }
        cur = match &block.exit {
            Exit::Return => break,
            Exit::Jump(next) => *next,
            Exit::Branch(br) => {
                let counter = counters.entry(br.key).or_insert(0);
                let c = *counter;
                if br.bound.is_none_or(|b| c < b) {
                    *counter += 1;
                    if let Some(slot) = br.var {
                        mat.set(slot, c as i64);
                    }
                    br.stay
                } else {
                    *counter = 0;
                    if let Some(slot) = br.var {
                        mat.set(slot, c as i64);
                    }
                    br.leave
                }
            }
        };
    }

    let mut totals = OpTally::<u64>::default();
    let mut block_counts = IndexMap::new();
    for ((name, node), n) in cfg.nodes.iter().zip(&executions) {
        totals.add_assign_ref(&node.tally.map(|v| v * n));
        block_counts.insert(name.clone(), *n);
    }
    Ok(InterpResult {
        block_counts,
        totals,
        accesses,
    })
}

/// Block execution counts and operation totals. `cap` bounds both block
/// executions and emitted accesses.
pub fn interpret_counts(cfg: &Cfg, bounds: &LoopBounds, cap: u64) -> Result<InterpResult, OracleError> {
    run(cfg, bounds, cap, &mut AddressInterner::default(), &mut |_| {})
}

/// The dynamic address stream of the interpreted execution. The control
/// variable of a loop-deciding branch holds the iteration index while the
/// loop body runs and the bound after the loop exits.
pub fn interpret_trace(cfg: &Cfg, bounds: &LoopBounds, cap: u64) -> Result<DynamicTrace, OracleError> {
    let mut out = DynamicTrace::default();
    let mut addresses = Vec::new();
    run(cfg, bounds, cap, &mut out.interner, &mut |a| addresses.push(a))?;
    out.addresses = addresses;
    Ok(out)
}

/// Exact reuse profile of the interpreted execution, streamed.
pub fn interpret_profile(cfg: &Cfg, bounds: &LoopBounds, cap: u64) -> Result<ReuseProfile, OracleError> {
    let mut tracker = StackDistanceTracker::new();
    let mut profile = ReuseProfile::default();
    run(cfg, bounds, cap, &mut AddressInterner::default(), &mut |a| {
        profile.record(tracker.access(a))
    })?;
    Ok(profile)
}
