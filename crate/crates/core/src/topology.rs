//! Interconnect topologies: lists of point-to-point links between rank network interfaces.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};

pub const MAX_RANKS: usize = 256;
pub const DEFAULT_IFACES: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(u8, u8)", into = "(u8, u8)")]
pub struct Endpoint {
    pub rank: u8,
    pub iface: u8,
}

impl Endpoint {
    pub const fn new(rank: u8, iface: u8) -> Self {
        Endpoint { rank, iface }
    }
}

impl From<(u8, u8)> for Endpoint {
    fn from((rank, iface): (u8, u8)) -> Self {
        Endpoint { rank, iface }
    }
}

impl From<Endpoint> for (u8, u8) {
    fn from(e: Endpoint) -> Self {
        (e.rank, e.iface)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.rank, self.iface)
    }
}

/// On-disk topology document.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TopologyDoc {
    num_ranks: usize,
    ifaces_per_rank: u8,
    connections: Vec<[Endpoint; 2]>,
}

/// A validated topology. Connections are stored canonically (lower endpoint first, sorted).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologySpec {
    num_ranks: usize,
    ifaces_per_rank: u8,
    connections: Vec<(Endpoint, Endpoint)>,
    peers: BTreeMap<Endpoint, Endpoint>,
}

impl TopologySpec {
    pub fn new(
        num_ranks: usize,
        ifaces_per_rank: u8,
        connections: impl IntoIterator<Item = (Endpoint, Endpoint)>,
    ) -> Result<Self> {
        if num_ranks == 0 || num_ranks > MAX_RANKS {
            return Err(SmiError::Topology(format!(
                "rank count {num_ranks} outside 1..={MAX_RANKS}"
            )));
        }
        if ifaces_per_rank == 0 {
            return Err(SmiError::Topology("ifaces_per_rank must be positive".into()));
        }
        let mut peers = BTreeMap::new();
        let mut canon = Vec::new();
        for (a, b) in connections {
            for e in [a, b] {
                if e.rank as usize >= num_ranks || e.iface >= ifaces_per_rank {
                    return Err(SmiError::Topology(format!(
                        "endpoint {e} out of range ({num_ranks} ranks, {ifaces_per_rank} ifaces)"
                    )));
                }
            }
            if a == b {
                return Err(SmiError::Topology(format!("self-loop on {a}")));
            }
            for e in [a, b] {
                if peers.contains_key(&e) {
                    return Err(SmiError::DuplicateEndpoint(e));
                }
            }
            peers.insert(a, b);
            peers.insert(b, a);
            canon.push(if a < b { (a, b) } else { (b, a) });
        }
        canon.sort();
        Ok(TopologySpec {
            num_ranks,
            ifaces_per_rank,
            connections: canon,
            peers,
        })
    }

    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    pub fn ifaces_per_rank(&self) -> u8 {
        self.ifaces_per_rank
    }

    pub fn connections(&self) -> &[(Endpoint, Endpoint)] {
        &self.connections
    }

    /// The endpoint wired to `e`, if any.
    pub fn peer(&self, e: Endpoint) -> Option<Endpoint> {
        self.peers.get(&e).copied()
    }

    pub fn degree(&self, rank: u8) -> usize {
        (0..self.ifaces_per_rank)
            .filter(|&i| self.peers.contains_key(&Endpoint::new(rank, i)))
            .count()
    }

    /// Wired neighbours of `rank` as (local iface, remote endpoint), by iface.
    pub fn links_of(&self, rank: u8) -> impl Iterator<Item = (u8, Endpoint)> + '_ {
        (0..self.ifaces_per_rank).filter_map(move |i| self.peer(Endpoint::new(rank, i)).map(|p| (i, p)))
    }

    /// Hop distances from `src` to every rank (None when unreachable).
    pub fn bfs_distances(&self, src: u8) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_ranks];
        dist[src as usize] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u as usize].unwrap();
            for (_, p) in self.links_of(u) {
                if dist[p.rank as usize].is_none() {
                    dist[p.rank as usize] = Some(d + 1);
                    queue.push_back(p.rank);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(Option::is_some)
    }

    pub fn to_json(&self) -> String {
        let doc = TopologyDoc {
            num_ranks: self.num_ranks,
            ifaces_per_rank: self.ifaces_per_rank,
            connections: self.connections.iter().map(|&(a, b)| [a, b]).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("topology serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_topology(&std::fs::read_to_string(path)?)
    }
}

pub fn parse_topology(text: &str) -> Result<TopologySpec> {
    let doc: TopologyDoc = serde_json::from_str(text)?;
    TopologySpec::new(
        doc.num_ranks,
        doc.ifaces_per_rank,
        doc.connections.into_iter().map(|[a, b]| (a, b)),
    )
}

/// Linear bus: iface 1 of rank i is wired to iface 0 of rank i+1.
pub fn make_bus(n: usize) -> Result<TopologySpec> {
    make_bus_with(n, DEFAULT_IFACES)
}

pub fn make_bus_with(n: usize, ifaces_per_rank: u8) -> Result<TopologySpec> {
    if n < 2 {
        return Err(SmiError::Topology("a bus needs at least 2 ranks".into()));
    }
    if ifaces_per_rank < 2 && n > 2 {
        return Err(SmiError::Topology(format!(
            "bus of {n} ranks needs 2 ifaces per rank, have {ifaces_per_rank}"
        )));
    }
    // With a single iface only the 2-rank bus is possible: (0,0)-(1,0).
    let right = if ifaces_per_rank < 2 { 0 } else { 1 };
    TopologySpec::new(
        n,
        ifaces_per_rank,
        (0..n - 1).map(|i| (Endpoint::new(i as u8, right), Endpoint::new(i as u8 + 1, 0))),
    )
}

/// 2D torus with wraparound. Rank (r, c) = r * cols + c; ifaces 0/1 = east/west, 2/3 = south/north.
/// Dimensions of extent 1 contribute no links; extent 2 yields two parallel links.
pub fn make_torus(rows: usize, cols: usize) -> Result<TopologySpec> {
    make_torus_with(rows, cols, DEFAULT_IFACES)
}

pub fn make_torus_with(rows: usize, cols: usize, ifaces_per_rank: u8) -> Result<TopologySpec> {
    let n = rows * cols;
    if rows == 0 || cols == 0 || !(2..=MAX_RANKS).contains(&n) {
        return Err(SmiError::Topology(format!("invalid torus shape {rows}x{cols}")));
    }
    let dims = [cols, rows].iter().filter(|&&d| d >= 2).count();
    let needed = 2 * dims;
    if needed > ifaces_per_rank as usize {
        return Err(SmiError::Topology(format!(
            "{rows}x{cols} torus needs {needed} ifaces per rank, have {ifaces_per_rank}"
        )));
    }
    let id = |r: usize, c: usize| (r * cols + c) as u8;
    let mut conns = Vec::new();
    // Interface numbering is compacted when a dimension is absent.
    let (east, west) = (0u8, 1u8);
    let (south, north) = if cols >= 2 { (2u8, 3u8) } else { (0u8, 1u8) };
    for r in 0..rows {
        for c in 0..cols {
            if cols >= 2 {
                conns.push((
                    Endpoint::new(id(r, c), east),
                    Endpoint::new(id(r, (c + 1) % cols), west),
                ));
            }
            if rows >= 2 {
                conns.push((
                    Endpoint::new(id(r, c), south),
                    Endpoint::new(id((r + 1) % rows, c), north),
                ));
            }
        }
    }
    TopologySpec::new(n, ifaces_per_rank, conns)
}
