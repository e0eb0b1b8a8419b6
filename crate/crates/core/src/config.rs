//! Port declarations and run configuration files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};
use crate::packet::DataType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortKind {
    P2p,
    Bcast,
    Reduce,
    Scatter,
    Gather,
}

/// One declared application port.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortDecl {
    pub port: u8,
    #[serde(rename = "type")]
    pub kind: PortKind,
    /// Element type; `None` accepts any type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<DataType>,
    /// Ranks allowed to use the port; `None` means every rank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<Vec<u8>>,
}

impl PortDecl {
    pub fn new(port: u8, kind: PortKind) -> Self {
        PortDecl {
            port,
            kind,
            dtype: None,
            endpoints: None,
        }
    }

    pub fn with_dtype(mut self, dtype: DataType) -> Self {
        self.dtype = Some(dtype);
        self
    }
}

/// The set of ports known to a run. Port `p` is served by CK pair `p mod pairs`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortMap {
    ports: BTreeMap<u8, PortDecl>,
}

#[derive(Serialize, Deserialize)]
struct PortsDoc {
    ports: Vec<PortDecl>,
}

impl PortMap {
    pub fn new(decls: impl IntoIterator<Item = PortDecl>) -> Result<Self> {
        let mut ports = BTreeMap::new();
        for d in decls {
            let p = d.port;
            if ports.insert(p, d).is_some() {
                return Err(SmiError::Config(format!("port {p} declared twice")));
            }
        }
        Ok(PortMap { ports })
    }

    /// `n` point-to-point ports numbered 0..n.
    pub fn p2p(n: u8) -> Self {
        PortMap::new((0..n).map(|p| PortDecl::new(p, PortKind::P2p))).unwrap()
    }

    pub fn get(&self, port: u8) -> Option<&PortDecl> {
        self.ports.get(&port)
    }

    pub fn ports(&self) -> impl Iterator<Item = u8> + '_ {
        self.ports.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.ports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ports.is_empty()
    }

    pub fn pair_of(port: u8, pairs: u8) -> u8 {
        port % pairs
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: PortsDoc = serde_json::from_str(text)?;
        PortMap::new(doc.ports)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let doc = PortsDoc {
            ports: self.ports.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("ports serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Cycle,
    Concurrent,
}

/// Knobs of the simulated transport.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    pub mode: Mode,
    /// Consecutive reads a CK unit may take from one input before moving on.
    #[serde(rename = "R")]
    pub polling_r: u32,
    /// Capacity (packets) of every FIFO link.
    pub fifo_capacity: usize,
    /// Wire latency in cycles; on-chip links always take one cycle.
    pub link_latency: u64,
    /// Reduce tile size C (elements).
    pub reduce_credits: usize,
    /// Asynchronicity degree per port, in elements. Missing ports get two packets' worth.
    pub k: BTreeMap<u8, usize>,
    pub trace: bool,
    /// Cycles without any movement before the cycle-stepped run declares deadlock.
    pub watchdog_cycles: u64,
    /// Idle wall-clock time before the concurrent run declares deadlock.
    pub watchdog_ms: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            mode: Mode::Cycle,
            polling_r: 8,
            fifo_capacity: 16,
            link_latency: 1,
            reduce_credits: 16,
            k: BTreeMap::new(),
            trace: false,
            watchdog_cycles: 20_000,
            watchdog_ms: 3_000,
        }
    }
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.polling_r == 0 {
            return Err(SmiError::Config("R must be positive".into()));
        }
        if self.fifo_capacity == 0 {
            return Err(SmiError::Config("fifo capacity must be positive".into()));
        }
        if self.link_latency == 0 {
            return Err(SmiError::Config("link latency must be at least one cycle".into()));
        }
        if self.reduce_credits == 0 {
            return Err(SmiError::Config("reduce credits must be positive".into()));
        }
        Ok(())
    }

    pub fn k_for(&self, port: u8, dtype: DataType) -> usize {
        self.k.get(&port).copied().unwrap_or(2 * dtype.max_elems_per_packet())
    }
}

/// Run configuration file: runtime knobs plus the artifacts a fabric is built from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfigFile {
    #[serde(flatten)]
    pub runtime: RuntimeConfig,
    pub topology: PathBuf,
    pub tables: PathBuf,
    pub ports: PathBuf,
}

impl RunConfigFile {
    /// Parses the file; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfigFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.topology, &mut cfg.tables, &mut cfg.ports] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.runtime.validate()?;
        Ok(cfg)
    }
}
