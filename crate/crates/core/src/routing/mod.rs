//! Static routing tables for the CK_S / CK_R forwarding units.
//!
//! Every rank has one CK_S/CK_R pair per network interface. A CK_S table is
//! indexed by destination rank, a CK_R table by port.

mod deadlock;
mod format;
mod updown;

use std::collections::HashSet;

use crate::config::PortMap;
use crate::error::{Result, SmiError};
use crate::topology::{Endpoint, TopologySpec};

pub use deadlock::{check_deadlock_free, DeadlockCheck, Resource};
pub use format::{emit_tables, load_tables, read_tables, write_tables, TABLE_MAGIC};
pub use updown::UpDown;

pub const PORT_ENTRIES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CksAction {
    /// Destination is this rank: hand to the paired CK_R.
    DeliverLocal,
    /// Hand to sibling CK_S `j` on this rank.
    ForwardLocalCks(u8),
    /// Transmit on this unit's own network interface.
    EmitIface,
    Unroutable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CkrAction {
    /// Deliver to the application endpoint of the port.
    ToApp,
    /// Hand to sibling CK_R `j`, which owns the port.
    ForwardLocalCkr(u8),
    Undeclared,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CksTable(pub Vec<CksAction>);

impl CksTable {
    pub fn lookup(&self, dst: u8) -> CksAction {
        self.0.get(dst as usize).copied().unwrap_or(CksAction::Unroutable)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CkrTable(pub Vec<CkrAction>);

impl CkrTable {
    pub fn lookup(&self, port: u8) -> CkrAction {
        self.0[port as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankTables {
    pub rank: u8,
    pub cks: Vec<CksTable>,
    pub ckr: Vec<CkrTable>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutingTables {
    num_ranks: usize,
    pairs: u8,
    ranks: Vec<RankTables>,
}

/// Position of a packet while walking the tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum At {
    Cks(u8, u8),
    Ckr(u8, u8),
}

/// The resources a packet occupies on its way, in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    pub resources: Vec<Resource>,
    pub wire_hops: usize,
}

impl RoutingTables {
    pub fn new(num_ranks: usize, pairs: u8, ranks: Vec<RankTables>) -> Result<Self> {
        if ranks.len() != num_ranks {
            return Err(SmiError::Tables(format!(
                "expected tables for {num_ranks} ranks, got {}",
                ranks.len()
            )));
        }
        for (i, r) in ranks.iter().enumerate() {
            if r.rank as usize != i || r.cks.len() != pairs as usize || r.ckr.len() != pairs as usize {
                return Err(SmiError::Tables(format!("inconsistent tables for rank {i}")));
            }
            if r.cks.iter().any(|t| t.0.len() != num_ranks) || r.ckr.iter().any(|t| t.0.len() != PORT_ENTRIES) {
                return Err(SmiError::Tables(format!("wrong table length at rank {i}")));
            }
        }
        Ok(RoutingTables {
            num_ranks,
            pairs,
            ranks,
        })
    }

    /// Builds tables from a next-hop function `(rank, dst) -> outgoing iface`.
    pub fn from_next_hops(
        topo: &TopologySpec,
        ports: &PortMap,
        next_hop: impl Fn(u8, u8) -> Option<u8>,
    ) -> Result<Self> {
        let n = topo.num_ranks();
        let pairs = topo.ifaces_per_rank();
        let mut ranks = Vec::with_capacity(n);
        for u in 0..n as u8 {
            let mut cks = Vec::with_capacity(pairs as usize);
            let mut ckr = Vec::with_capacity(pairs as usize);
            for i in 0..pairs {
                let mut row = Vec::with_capacity(n);
                for d in 0..n as u8 {
                    row.push(if d == u {
                        CksAction::DeliverLocal
                    } else {
                        match next_hop(u, d) {
                            None => CksAction::Unroutable,
                            Some(e) => {
                                if topo.peer(Endpoint::new(u, e)).is_none() {
                                    return Err(SmiError::Tables(format!(
                                        "route {u}->{d} leaves through unwired iface {e}"
                                    )));
                                }
                                if e == i {
                                    CksAction::EmitIface
                                } else {
                                    CksAction::ForwardLocalCks(e)
                                }
                            }
                        }
                    });
                }
                cks.push(CksTable(row));
                let mut prow = vec![CkrAction::Undeclared; PORT_ENTRIES];
                for p in ports.ports() {
                    let owner = PortMap::pair_of(p, pairs);
                    prow[p as usize] = if owner == i {
                        CkrAction::ToApp
                    } else {
                        CkrAction::ForwardLocalCkr(owner)
                    };
                }
                ckr.push(CkrTable(prow));
            }
            ranks.push(RankTables { rank: u, cks, ckr });
        }
        RoutingTables::new(n, pairs, ranks)
    }

    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    pub fn pairs(&self) -> u8 {
        self.pairs
    }

    pub fn rank(&self, r: u8) -> &RankTables {
        &self.ranks[r as usize]
    }

    pub fn ranks(&self) -> &[RankTables] {
        &self.ranks
    }

    pub fn cks(&self, rank: u8, pair: u8) -> &CksTable {
        &self.ranks[rank as usize].cks[pair as usize]
    }

    pub fn ckr(&self, rank: u8, pair: u8) -> &CkrTable {
        &self.ranks[rank as usize].ckr[pair as usize]
    }

    /// Follows the tables from CK_S `entry_pair` of `src` to `dst`. With a port,
    /// the walk continues through the destination CK_R tables to the owning unit.
    pub fn walk(&self, topo: &TopologySpec, src: u8, entry_pair: u8, dst: u8, port: Option<u8>) -> Result<Walk> {
        let mut at = At::Cks(src, entry_pair);
        let mut seen = HashSet::new();
        let mut resources = Vec::new();
        let mut wire_hops = 0;
        loop {
            if !seen.insert(at) {
                return Err(SmiError::Tables(format!("routing loop for {src}->{dst} at {at:?}")));
            }
            match at {
                At::Cks(u, i) => match self.cks(u, i).lookup(dst) {
                    CksAction::DeliverLocal => {
                        resources.push(Resource::CksToCkr { rank: u, pair: i });
                        at = At::Ckr(u, i);
                    }
                    CksAction::ForwardLocalCks(j) => {
                        resources.push(Resource::CksToCks {
                            rank: u,
                            from: i,
                            to: j,
                        });
                        at = At::Cks(u, j);
                    }
                    CksAction::EmitIface => {
                        let peer = topo
                            .peer(Endpoint::new(u, i))
                            .ok_or_else(|| SmiError::Tables(format!("rank {u} emits on unwired iface {i}")))?;
                        resources.push(Resource::Wire { rank: u, iface: i });
                        wire_hops += 1;
                        at = At::Ckr(peer.rank, peer.iface);
                    }
                    CksAction::Unroutable => {
                        return Err(SmiError::Unroutable {
                            rank: u,
                            reason: format!("no route to rank {dst}"),
                        })
                    }
                },
                At::Ckr(v, j) => {
                    if v != dst {
                        resources.push(Resource::CkrToCks { rank: v, pair: j });
                        at = At::Cks(v, j);
                        continue;
                    }
                    let Some(port) = port else {
                        return Ok(Walk { resources, wire_hops });
                    };
                    match self.ckr(v, j).lookup(port) {
                        CkrAction::ToApp => return Ok(Walk { resources, wire_hops }),
                        CkrAction::ForwardLocalCkr(k) => {
                            resources.push(Resource::CkrToCkr {
                                rank: v,
                                from: j,
                                to: k,
                            });
                            at = At::Ckr(v, k);
                        }
                        CkrAction::Undeclared => {
                            return Err(SmiError::Unroutable {
                                rank: v,
                                reason: format!("port {port} not declared"),
                            })
                        }
                    }
                }
            }
        }
    }

    /// Wire hop counts between every pair of ranks, entering at CK_S 0.
    pub fn hop_counts(&self, topo: &TopologySpec) -> Result<Vec<Vec<usize>>> {
        let n = self.num_ranks as u8;
        (0..n)
            .map(|s| (0..n).map(|d| Ok(self.walk(topo, s, 0, d, None)?.wire_hops)).collect())
            .collect()
    }

    /// Checks that every (src, entry pair, dst) walk terminates at dst within
    /// `num_ranks` wire hops. Returns the number of walks checked.
    pub fn check_reachability(&self, topo: &TopologySpec) -> Result<usize> {
        let n = self.num_ranks as u8;
        let mut checked = 0;
        for s in 0..n {
            for i in 0..self.pairs {
                for d in 0..n {
                    let w = self.walk(topo, s, i, d, None)?;
                    if w.wire_hops > self.num_ranks {
                        return Err(SmiError::Tables(format!("route {s}->{d} takes {} hops", w.wire_hops)));
                    }
                    checked += 1;
                }
            }
        }
        Ok(checked)
    }
}

/// Generates deadlock-free up*/down* routes and the matching tables.
pub fn generate_routes(topo: &TopologySpec, ports: &PortMap) -> Result<RoutingTables> {
    let n = topo.num_ranks();
    let mut unreachable = Vec::new();
    for s in 0..n as u8 {
        for (d, dist) in topo.bfs_distances(s).iter().enumerate() {
            if dist.is_none() {
                unreachable.push((s, d as u8));
            }
        }
    }
    if !unreachable.is_empty() {
        return Err(SmiError::Unreachable(unreachable));
    }
    let updown = UpDown::new(topo);
    let hops = updown.next_hops();
    let tables = RoutingTables::from_next_hops(topo, ports, |u, d| hops[u as usize][d as usize])?;
    match check_deadlock_free(topo, &tables, ports)? {
        DeadlockCheck::Acyclic(_) => Ok(tables),
        DeadlockCheck::Cycle(c) => Err(SmiError::Tables(format!(
            "generated routes have a dependency cycle: {c:?}"
        ))),
    }
}
