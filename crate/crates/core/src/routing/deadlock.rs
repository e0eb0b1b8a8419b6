use std::collections::{BTreeMap, BTreeSet};

use super::RoutingTables;
use crate::config::PortMap;
use crate::error::Result;
use crate::topology::TopologySpec;

/// A directed FIFO link a route can occupy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    /// Network link leaving `rank` through `iface`.
    Wire {
        rank: u8,
        iface: u8,
    },
    CkrToCks {
        rank: u8,
        pair: u8,
    },
    CksToCkr {
        rank: u8,
        pair: u8,
    },
    CksToCks {
        rank: u8,
        from: u8,
        to: u8,
    },
    CkrToCkr {
        rank: u8,
        from: u8,
        to: u8,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeadlockCheck {
    /// Topological order of the channel-dependency graph.
    Acyclic(Vec<Resource>),
    /// A dependency cycle; the last resource depends on the first.
    Cycle(Vec<Resource>),
}

impl DeadlockCheck {
    pub fn is_acyclic(&self) -> bool {
        matches!(self, DeadlockCheck::Acyclic(_))
    }
}

/// Builds the channel-dependency graph of every route the tables can produce
/// (all sources, entry units, destinations and declared ports) and checks it for cycles.
pub fn check_deadlock_free(topo: &TopologySpec, tables: &RoutingTables, ports: &PortMap) -> Result<DeadlockCheck> {
    let mut graph: BTreeMap<Resource, BTreeSet<Resource>> = BTreeMap::new();
    let n = tables.num_ranks() as u8;
    let port_list: Vec<Option<u8>> = if ports.is_empty() {
        vec![None]
    } else {
        ports.ports().map(Some).collect()
    };
    for s in 0..n {
        for entry in 0..tables.pairs() {
            for d in 0..n {
                for &p in &port_list {
                    let walk = tables.walk(topo, s, entry, d, p)?;
                    for r in &walk.resources {
                        graph.entry(*r).or_default();
                    }
                    for w in walk.resources.windows(2) {
                        graph.entry(w[0]).or_default().insert(w[1]);
                    }
                }
            }
        }
    }
    Ok(find_order(&graph))
}

fn find_order(graph: &BTreeMap<Resource, BTreeSet<Resource>>) -> DeadlockCheck {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let mut mark: BTreeMap<Resource, Mark> = graph.keys().map(|&k| (k, Mark::New)).collect();
    let mut post = Vec::with_capacity(graph.len());
    for &start in graph.keys() {
        if mark[&start] != Mark::New {
            continue;
        }
        // (node, remaining successors)
        let mut stack: Vec<(Resource, Vec<Resource>)> = vec![(start, graph[&start].iter().rev().copied().collect())];
        mark.insert(start, Mark::Open);
        while let Some((node, succ)) = stack.last_mut() {
            match succ.pop() {
                Some(next) => match mark[&next] {
                    Mark::New => {
                        mark.insert(next, Mark::Open);
                        let s = graph[&next].iter().rev().copied().collect();
                        stack.push((next, s));
                    }
                    Mark::Open => {
                        let from = stack.iter().position(|(r, _)| *r == next).unwrap();
                        return DeadlockCheck::Cycle(stack[from..].iter().map(|(r, _)| *r).collect());
                    }
                    Mark::Done => {}
                },
                None => {
                    let node = *node;
                    mark.insert(node, Mark::Done);
                    post.push(node);
                    stack.pop();
                }
            }
        }
    }
    post.reverse();
    DeadlockCheck::Acyclic(post)
}
