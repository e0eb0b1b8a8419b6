//! Benchmarks and applications run on the simulated fabric. Timing is always
//! in simulated cycles.

mod bench;
mod gesummv;
mod stencil;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Mode, PortDecl, PortKind, PortMap, RuntimeConfig};
use crate::error::{Result, SmiError};
use crate::packet::DataType;
use crate::routing::{generate_routes, load_tables};
use crate::topology::TopologySpec;
use crate::transport::Fabric;

pub use bench::{
    bench_bandwidth, bench_collectives, bench_injection, bench_latency, run_collective, steady_interval, BandwidthRow,
    CollectiveKind, CollectiveRow, InjectionRow, LatencyRow,
};
pub use gesummv::{app_gesummv, gesummv_reference, GesummvRun};
pub use stencil::{
    app_stencil, stencil_hiding_check, stencil_reference, HidingCheck, StencilConfig, StencilRun, PORT_EAST,
    PORT_NORTH, PORT_SOUTH, PORT_WEST,
};

/// Ports every harness program may use. Routing tables generated for this map
/// serve all benchmarks and applications.
pub fn standard_ports() -> PortMap {
    let p2p = |p| PortDecl::new(p, PortKind::P2p);
    PortMap::new([
        p2p(0),
        p2p(PORT_WEST).with_dtype(DataType::Float),
        p2p(PORT_EAST).with_dtype(DataType::Float),
        p2p(PORT_NORTH).with_dtype(DataType::Float),
        p2p(PORT_SOUTH).with_dtype(DataType::Float),
        PortDecl::new(5, PortKind::Bcast),
        PortDecl::new(6, PortKind::Scatter),
        PortDecl::new(7, PortKind::Gather),
        PortDecl::new(8, PortKind::Reduce),
        p2p(9),
        PortDecl::new(10, PortKind::Bcast),
        PortDecl::new(11, PortKind::Reduce),
    ])
    .expect("distinct ports")
}

/// Fabric over the harness ports. Without a topology file `default` is used;
/// without a tables directory routes are generated.
pub fn load_fabric(
    topology: Option<&Path>,
    tables: Option<&Path>,
    default: impl FnOnce() -> Result<TopologySpec>,
    rt: RuntimeConfig,
) -> Result<Fabric> {
    let ports = standard_ports();
    let topo = match topology {
        Some(t) => TopologySpec::load(t)?,
        None => default()?,
    };
    let tables = match tables {
        Some(dir) => load_tables(dir)?,
        None => generate_routes(&topo, &ports)?,
    };
    Fabric::new(topo, tables, ports, rt)
}

/// Benchmark settings. Empty lists fall back to each benchmark's defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub benchmark: Option<String>,
    pub topology: Option<PathBuf>,
    pub tables: Option<PathBuf>,
    pub mode: Mode,
    #[serde(rename = "R")]
    pub r: Vec<u32>,
    pub sizes: Vec<usize>,
    pub hops: Vec<usize>,
    pub repetitions: usize,
    pub output: Option<PathBuf>,
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: BenchConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.topology, &mut cfg.tables, &mut cfg.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.contains(&0) {
            return Err(SmiError::Config("message sizes must be positive".into()));
        }
        if self.r.contains(&0) {
            return Err(SmiError::Config("R must be positive".into()));
        }
        if self.mode != Mode::Cycle {
            return Err(SmiError::Config(
                "benchmarks report simulated cycles and need cycle mode".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn reps(&self) -> usize {
        self.repetitions.max(1)
    }
}

/// A row type with a fixed CSV schema.
pub trait CsvRow {
    const HEADER: &'static str;
    fn fields(&self) -> String;
}

pub fn write_csv<R: CsvRow>(rows: &[R], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", R::HEADER)?;
    for r in rows {
        writeln!(out, "{}", r.fields())?;
    }
    Ok(())
}

pub fn csv_string<R: CsvRow>(rows: &[R]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}
