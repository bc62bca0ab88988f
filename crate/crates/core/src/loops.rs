//! Dominators and natural loops of a [`Cfg`].

use std::collections::{BTreeMap, BTreeSet};

use crate::cfg::{Cfg, Polarity};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NaturalLoop {
    pub header: String,
    pub latches: BTreeSet<String>,
    pub body: BTreeSet<String>,
}

impl NaturalLoop {
    pub fn contains(&self, block: &str) -> bool {
        self.body.contains(block)
    }
}

/// `dom[b]` is the set of blocks dominating `b`. Unreachable blocks map to
/// the full block set.
pub fn dominators(cfg: &Cfg) -> BTreeMap<String, BTreeSet<String>> {
    let all: BTreeSet<String> = cfg.nodes.keys().cloned().collect();
    let mut dom: BTreeMap<String, BTreeSet<String>> =
        cfg.nodes.keys().map(|b| (b.clone(), all.clone())).collect();
    dom.insert(cfg.entry.clone(), BTreeSet::from([cfg.entry.clone()]));
    let mut changed = true;
    while changed {
        changed = false;
        for block in cfg.nodes.keys() {
            if *block == cfg.entry {
                continue;
            }
            let mut preds = cfg.in_edges(block).map(|e| &dom[e.from.as_str()]);
            let mut next = match preds.next() {
                Some(first) => first.clone(),
                None => continue,
            };
            for p in preds {
                next = next.intersection(p).cloned().collect();
            }
            next.insert(block.clone());
            if next != dom[block.as_str()] {
                dom.insert(block.clone(), next);
                changed = true;
            }
        }
    }
    dom
}

/// One loop per header, merging every back edge into it. Ordered by header
/// position in the function.
pub fn natural_loops(cfg: &Cfg) -> Vec<NaturalLoop> {
    let dom = dominators(cfg);
    let mut by_header: BTreeMap<usize, NaturalLoop> = BTreeMap::new();
    for edge in &cfg.edges {
        if !dom[edge.from.as_str()].contains(&edge.to) {
            continue;
        }
        let pos = cfg.nodes.get_index_of(edge.to.as_str()).expect("edge target exists");
        let lp = by_header.entry(pos).or_insert_with(|| NaturalLoop {
            header: edge.to.clone(),
            latches: BTreeSet::new(),
            body: BTreeSet::from([edge.to.clone()]),
        });
        lp.latches.insert(edge.from.clone());
        let mut stack = vec![edge.from.clone()];
        while let Some(block) = stack.pop() {
            if lp.body.insert(block.clone()) {
                stack.extend(cfg.in_edges(&block).map(|e| e.from.clone()));
            }
        }
    }
    by_header.into_values().collect()
}

/// Blocks whose conditional branch keeps one edge inside some natural loop
/// and sends the other outside it, mapped to that loop's header. Branches
/// with both targets inside (an `if` in a loop body) are not included. For a
/// block deciding several nested loops the innermost wins.
pub fn loop_deciders(cfg: &Cfg) -> BTreeMap<String, String> {
    let loops = natural_loops(cfg);
    let mut out = BTreeMap::new();
    for (block, _, _) in cfg.conditional_branches() {
        let targets: Vec<&str> = cfg
            .out_edges(block)
            .filter(|e| e.polarity != Polarity::Unconditional)
            .map(|e| e.to.as_str())
            .collect();
        let innermost = loops
            .iter()
            .filter(|lp| lp.contains(block))
            .filter(|lp| {
                let inside = targets.iter().filter(|t| lp.contains(t)).count();
                inside == 1 && targets.len() == 2
            })
            .min_by_key(|lp| lp.body.len());
        if let Some(lp) = innermost {
            out.insert(block.to_string(), lp.header.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfg::{CfgEdge, CfgNode, OpTally};
    use crate::ir::SourceLoc;

    fn graph(names: &[&str], edges: &[(&str, &str, Polarity)]) -> Cfg {
        Cfg {
            function: "f".into(),
            nodes: names
                .iter()
                .map(|n| {
                    (
                        n.to_string(),
                        CfgNode {
                            name: n.to_string(),
                            tally: OpTally::default(),
                            accesses: vec![],
                            loop_control_var: None,
                            position: SourceLoc::UNKNOWN,
                            is_return: false,
                        },
                    )
                })
                .collect(),
            edges: edges
                .iter()
                .enumerate()
                .map(|(i, (a, b, p))| CfgEdge {
                    from: a.to_string(),
                    to: b.to_string(),
                    branch_loc: SourceLoc::new(i as u32 + 1, 1),
                    polarity: *p,
                    prob: None,
                })
                .collect(),
            entry: names[0].into(),
        }
    }

    #[test]
    fn if_inside_loop_is_not_a_decider() {
        use Polarity::*;
        let cfg = graph(
            &["e", "h", "b", "t", "j", "x"],
            &[
                ("e", "h", Unconditional),
                ("h", "b", CondTrue),
                ("h", "x", CondFalse),
                ("b", "t", CondTrue),
                ("b", "j", CondFalse),
                ("t", "j", Unconditional),
                ("j", "h", Unconditional),
            ],
        );
        let loops = natural_loops(&cfg);
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].header, "h");
        assert_eq!(loops[0].body.len(), 4);
        let deciders = loop_deciders(&cfg);
        assert_eq!(deciders.len(), 1);
        assert_eq!(deciders["h"], "h");
    }

    #[test]
    fn do_while_decider_is_the_latch() {
        use Polarity::*;
        let cfg = graph(
            &["e", "body", "cond", "x"],
            &[
                ("e", "body", Unconditional),
                ("body", "cond", Unconditional),
                ("cond", "body", CondTrue),
                ("cond", "x", CondFalse),
            ],
        );
        let deciders = loop_deciders(&cfg);
        assert_eq!(deciders["cond"], "body");
    }

    #[test]
    fn nested_headers_map_to_innermost() {
        use Polarity::*;
        let cfg = graph(
            &["e", "h1", "h2", "b2", "l1", "x"],
            &[
                ("e", "h1", Unconditional),
                ("h1", "h2", CondTrue),
                ("h1", "x", CondFalse),
                ("h2", "b2", CondTrue),
                ("h2", "l1", CondFalse),
                ("b2", "h2", Unconditional),
                ("l1", "h1", Unconditional),
            ],
        );
        let deciders = loop_deciders(&cfg);
        assert_eq!(deciders["h1"], "h1");
        assert_eq!(deciders["h2"], "h2");
    }
}
