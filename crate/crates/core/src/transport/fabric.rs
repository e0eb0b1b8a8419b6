use std::collections::BTreeMap;
use std::path::Path;

use super::link::{Link, LinkDesc, LinkId, Node};
use super::unit::{CkKind, CkUnit};
use crate::config::{Mode, PortMap, RunConfigFile, RuntimeConfig};
use crate::error::{Result, SmiError};
use crate::routing::{generate_routes, load_tables, RoutingTables};
use crate::topology::{Endpoint, TopologySpec};

/// Latency of links between units on the same rank.
pub const ON_CHIP_LATENCY: u64 = 1;

/// Links and units of every rank, ready to be simulated.
pub(crate) struct Layout {
    pub descs: Vec<LinkDesc>,
    pub links: Vec<Link>,
    pub units: Vec<CkUnit>,
    pub app_ports: BTreeMap<(u8, u8), (LinkId, LinkId)>,
}

struct Builder {
    descs: Vec<LinkDesc>,
    links: Vec<Link>,
    capacity: usize,
}

impl Builder {
    fn add(&mut self, from: Node, to: Node, wire: bool, latency: u64) -> LinkId {
        self.descs.push(LinkDesc { from, to, wire });
        self.links.push(Link::new(self.capacity, latency));
        self.links.len() - 1
    }
}

/// A simulated cluster: topology, routing tables, declared ports and runtime
/// knobs. Runs are independent; every run starts from empty links.
#[derive(Clone, Debug)]
pub struct Fabric {
    topology: TopologySpec,
    tables: RoutingTables,
    ports: PortMap,
    config: RuntimeConfig,
}

impl Fabric {
    pub fn new(topology: TopologySpec, tables: RoutingTables, ports: PortMap, config: RuntimeConfig) -> Result<Self> {
        config.validate()?;
        if tables.num_ranks() != topology.num_ranks() {
            return Err(SmiError::Tables(format!(
                "tables cover {} ranks, topology has {}",
                tables.num_ranks(),
                topology.num_ranks()
            )));
        }
        if tables.pairs() != topology.ifaces_per_rank() {
            return Err(SmiError::Tables(format!(
                "tables have {} CK pairs per rank, topology has {} interfaces",
                tables.pairs(),
                topology.ifaces_per_rank()
            )));
        }
        for d in ports.ports().filter_map(|p| ports.get(p)) {
            if let Some(eps) = &d.endpoints {
                if let Some(r) = eps.iter().find(|&&r| r as usize >= topology.num_ranks()) {
                    return Err(SmiError::Config(format!("port {} lists unknown rank {r}", d.port)));
                }
            }
        }
        Ok(Fabric {
            topology,
            tables,
            ports,
            config,
        })
    }

    /// Builds the fabric with freshly generated routes.
    pub fn with_generated_routes(topology: TopologySpec, ports: PortMap, config: RuntimeConfig) -> Result<Self> {
        let tables = generate_routes(&topology, &ports)?;
        Fabric::new(topology, tables, ports, config)
    }

    pub fn from_config_file(path: &Path) -> Result<Self> {
        let cfg = RunConfigFile::load(path)?;
        Fabric::new(
            TopologySpec::load(&cfg.topology)?,
            load_tables(&cfg.tables)?,
            PortMap::load(&cfg.ports)?,
            cfg.runtime,
        )
    }

    pub fn topology(&self) -> &TopologySpec {
        &self.topology
    }

    pub fn tables(&self) -> &RoutingTables {
        &self.tables
    }

    pub fn ports(&self) -> &PortMap {
        &self.ports
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut RuntimeConfig {
        &mut self.config
    }

    pub fn num_ranks(&self) -> usize {
        self.topology.num_ranks()
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.config.mode = mode;
        self
    }

    fn hosts(&self, port: u8, rank: u8) -> bool {
        self.ports
            .get(port)
            .and_then(|d| d.endpoints.as_ref())
            .is_none_or(|e| e.contains(&rank))
    }

    pub(crate) fn layout(&self, concurrent: bool) -> Layout {
        let n = self.tables.pairs();
        let (chip, wire_lat) = if concurrent {
            (0, 0)
        } else {
            (ON_CHIP_LATENCY, self.config.link_latency)
        };
        let mut b = Builder {
            descs: Vec::new(),
            links: Vec::new(),
            capacity: self.config.fifo_capacity,
        };
        let ranks = self.num_ranks();
        let mut app_ports = BTreeMap::new();
        let mut s2r = vec![Vec::new(); ranks];
        let mut r2s = vec![Vec::new(); ranks];
        let mut sib_s = vec![BTreeMap::new(); ranks];
        let mut sib_r = vec![BTreeMap::new(); ranks];
        for r in 0..ranks {
            let rank = r as u8;
            for port in self.ports.ports().filter(|&p| self.hosts(p, rank)) {
                let pair = PortMap::pair_of(port, n);
                let app = Node::App { rank, port };
                let to = b.add(app, Node::Cks { rank, pair }, false, chip);
                let from = b.add(Node::Ckr { rank, pair }, app, false, chip);
                app_ports.insert((rank, port), (to, from));
            }
            for j in 0..n {
                let cks = Node::Cks { rank, pair: j };
                let ckr = Node::Ckr { rank, pair: j };
                s2r[r].push(b.add(cks, ckr, false, chip));
                r2s[r].push(b.add(ckr, cks, false, chip));
            }
            for j in 0..n {
                for k in (0..n).filter(|&k| k != j) {
                    let l = b.add(Node::Cks { rank, pair: j }, Node::Cks { rank, pair: k }, false, chip);
                    sib_s[r].insert((j, k), l);
                    let l = b.add(Node::Ckr { rank, pair: j }, Node::Ckr { rank, pair: k }, false, chip);
                    sib_r[r].insert((j, k), l);
                }
            }
        }
        let mut wire_out = BTreeMap::new();
        let mut wire_in = BTreeMap::new();
        for r in 0..ranks as u8 {
            for j in 0..n {
                if let Some(peer) = self.topology.peer(Endpoint::new(r, j)) {
                    let l = b.add(
                        Node::Cks { rank: r, pair: j },
                        Node::Ckr {
                            rank: peer.rank,
                            pair: peer.iface,
                        },
                        true,
                        wire_lat,
                    );
                    wire_out.insert((r, j), l);
                    wire_in.insert((peer.rank, peer.iface), l);
                }
            }
        }

        let r_poll = self.config.polling_r;
        let mut units = Vec::new();
        for r in 0..ranks {
            let rank = r as u8;
            let owned = |j: u8| {
                app_ports
                    .iter()
                    .filter(move |((ar, p), _)| *ar == rank && PortMap::pair_of(*p, n) == j)
                    .map(|((_, p), ids)| (*p, *ids))
            };
            for j in 0..n {
                let mut inputs: Vec<LinkId> = wire_in.get(&(rank, j)).copied().into_iter().collect();
                inputs.push(s2r[r][j as usize]);
                inputs.extend((0..n).filter(|&k| k != j).map(|k| sib_r[r][&(k, j)]));
                let siblings = (0..n).map(|k| sib_r[r].get(&(j, k)).copied()).collect();
                let apps = owned(j).map(|(p, (_, from))| (p, from)).collect();
                units.push(CkUnit::new(
                    rank,
                    CkKind::Receiver,
                    j,
                    r_poll,
                    inputs,
                    r2s[r][j as usize],
                    siblings,
                    None,
                    apps,
                ));
            }
            for j in 0..n {
                let mut inputs: Vec<LinkId> = owned(j).map(|(_, (to, _))| to).collect();
                inputs.push(r2s[r][j as usize]);
                inputs.extend((0..n).filter(|&k| k != j).map(|k| sib_s[r][&(k, j)]));
                let siblings = (0..n).map(|k| sib_s[r].get(&(j, k)).copied()).collect();
                units.push(CkUnit::new(
                    rank,
                    CkKind::Sender,
                    j,
                    r_poll,
                    inputs,
                    s2r[r][j as usize],
                    siblings,
                    wire_out.get(&(rank, j)).copied(),
                    BTreeMap::new(),
                ));
            }
        }
        Layout {
            descs: b.descs,
            links: b.links,
            units,
            app_ports,
        }
    }
}
