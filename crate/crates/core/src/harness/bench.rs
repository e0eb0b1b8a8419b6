use super::{load_fabric, standard_ports, BenchConfig, CsvRow};
use crate::collectives::{fold, ReduceOp};
use crate::config::{Mode, PortMap, RuntimeConfig};
use crate::error::{Result, SmiError};
use crate::packet::{DataType, PACKET_BYTES};
use crate::topology::{make_bus, make_torus, TopologySpec};
use crate::transport::{Fabric, Node, Program, TraceKind};

const STREAM_PORT: u8 = 9;
const PING_PORT: u8 = 0;
const PONG_PORT: u8 = 9;
const BCAST_PORT: u8 = 5;
const REDUCE_PORT: u8 = 8;

/// Packets skipped before the steady-state window, and the window length.
const WARMUP: usize = 64;
const WINDOW: usize = 64;

fn runtime(trace: bool) -> RuntimeConfig {
    RuntimeConfig {
        mode: Mode::Cycle,
        trace,
        ..RuntimeConfig::default()
    }
}

fn bench_fabric(
    cfg: &BenchConfig,
    default: impl FnOnce() -> Result<TopologySpec>,
    rt: RuntimeConfig,
) -> Result<Fabric> {
    load_fabric(cfg.topology.as_deref(), cfg.tables.as_deref(), default, rt)
}

/// Average cycles between consecutive events over a steady window, or over
/// all events when there are too few for the window.
pub fn steady_interval(cycles: &[u64]) -> Option<f64> {
    if cycles.len() > WARMUP + WINDOW {
        Some((cycles[WARMUP + WINDOW] - cycles[WARMUP]) as f64 / WINDOW as f64)
    } else if cycles.len() >= 2 {
        Some((cycles[cycles.len() - 1] - cycles[0]) as f64 / (cycles.len() - 1) as f64)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InjectionRow {
    pub r: u32,
    pub cycles_per_packet: f64,
}

impl CsvRow for InjectionRow {
    const HEADER: &'static str = "R,cycles_per_packet";
    fn fields(&self) -> String {
        format!("{},{}", self.r, self.cycles_per_packet)
    }
}

/// One rank, four CK pairs, one application injecting a single-element
/// message every cycle into CK_S 0. Reports the steady-state interval between
/// CK_S 0 accepts from the application.
pub fn bench_injection(cfg: &BenchConfig) -> Result<Vec<InjectionRow>> {
    let rs = if cfg.r.is_empty() {
        vec![1, 4, 8, 16]
    } else {
        cfg.r.clone()
    };
    let packets = WARMUP + WINDOW + 32;
    let mut rows = Vec::new();
    for r in rs {
        let rt = RuntimeConfig {
            polling_r: r,
            ..runtime(true)
        };
        let topo = TopologySpec::new(1, 4, [])?;
        let f = Fabric::with_generated_routes(topo, PortMap::p2p(1), rt)?;
        let rep = f.run(vec![
            Program::new(0, move |ctx| {
                let w = ctx.world();
                for i in 0..packets {
                    ctx.open_send_channel::<i32>(1, 0, 0, &w)?.push(i as i32)?;
                }
                Ok(())
            }),
            Program::new(0, move |ctx| {
                let w = ctx.world();
                for i in 0..packets {
                    let v = ctx.open_recv_channel::<i32>(1, 0, 0, &w)?.pop()?;
                    if v != i as i32 {
                        return Err(SmiError::ProtocolViolation(format!("injection: got {v}, expected {i}")));
                    }
                }
                Ok(())
            }),
        ])?;
        let app = Node::App { rank: 0, port: 0 };
        let cks = Node::Cks { rank: 0, pair: 0 };
        let link = rep
            .links
            .iter()
            .position(|(d, _)| d.from == app && d.to == cks)
            .expect("application link");
        let accepts: Vec<u64> = rep
            .trace
            .iter()
            .filter(|e| e.kind == TraceKind::Accept && e.at == cks && e.link == link)
            .map(|e| e.cycle)
            .collect();
        rows.push(InjectionRow {
            r,
            cycles_per_packet: steady_interval(&accepts).unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

/// Lowest rank whose routed distance from rank 0 is `hops`.
fn rank_at(f: &Fabric, hops: usize) -> Result<u8> {
    let h = f.tables().hop_counts(f.topology())?;
    (0..f.num_ranks())
        .find(|&r| h[0][r] == hops)
        .map(|r| r as u8)
        .ok_or_else(|| SmiError::Config(format!("no rank is {hops} hops from rank 0")))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthRow {
    pub size: usize,
    pub hops: usize,
    pub cycles: u64,
    /// Steady-state interval between packet arrivals; needs two packets.
    pub cycles_per_packet: Option<f64>,
    pub payload_bytes_per_cycle: Option<f64>,
    pub efficiency: f64,
}

impl CsvRow for BandwidthRow {
    const HEADER: &'static str = "size,hops,cycles,cycles_per_packet,payload_bytes_per_cycle,efficiency";
    fn fields(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
        format!(
            "{},{},{},{},{},{}",
            self.size,
            self.hops,
            self.cycles,
            opt(self.cycles_per_packet),
            opt(self.payload_bytes_per_cycle),
            self.efficiency
        )
    }
}

/// Streams `size` floats from rank 0 to the rank `hops` away (eager protocol).
/// Efficiency is payload bytes over link bytes on the busiest network link.
pub fn bench_bandwidth(cfg: &BenchConfig) -> Result<Vec<BandwidthRow>> {
    let sizes = if cfg.sizes.is_empty() {
        vec![1, 7, 2800]
    } else {
        cfg.sizes.clone()
    };
    let hops = if cfg.hops.is_empty() {
        vec![1, 4, 7]
    } else {
        cfg.hops.clone()
    };
    let mut rows = Vec::new();
    for &size in &sizes {
        for &h in &hops {
            let mut rt = runtime(true);
            rt.k.insert(STREAM_PORT, size);
            let f = bench_fabric(cfg, || make_bus(8), rt)?;
            let dst = rank_at(&f, h)?;
            let rep = f.run(vec![
                Program::new(0, move |ctx| {
                    let mut ch = ctx.open_send_channel::<f32>(size, dst as usize, STREAM_PORT, &ctx.world())?;
                    for i in 0..size {
                        ch.push(i as f32)?;
                    }
                    Ok(())
                }),
                Program::new(dst, move |ctx| {
                    let mut ch = ctx.open_recv_channel::<f32>(size, 0, STREAM_PORT, &ctx.world())?;
                    for i in 0..size {
                        if ch.pop()? != i as f32 {
                            return Err(SmiError::ProtocolViolation(format!("bandwidth: element {i} corrupted")));
                        }
                    }
                    Ok(())
                }),
            ])?;
            let sink = Node::App {
                rank: dst,
                port: STREAM_PORT,
            };
            let arrivals: Vec<u64> = rep
                .trace
                .iter()
                .filter(|e| e.kind == TraceKind::Consume && e.at == sink && e.is_data())
                .map(|e| e.cycle)
                .collect();
            let cpp = steady_interval(&arrivals);
            let elem = DataType::Float.size_bytes() as f64;
            let busiest = rep
                .links
                .iter()
                .filter(|(d, _)| d.wire || h == 0)
                .max_by_key(|(_, s)| s.data_packets)
                .map(|(_, s)| *s)
                .unwrap_or_default();
            let efficiency = busiest.data_elements as f64 * elem / (busiest.packets as f64 * PACKET_BYTES as f64);
            let per_packet = size.min(DataType::Float.max_elems_per_packet()) as f64 * elem;
            rows.push(BandwidthRow {
                size,
                hops: h,
                cycles: rep.cycles,
                cycles_per_packet: cpp,
                payload_bytes_per_cycle: cpp.map(|c| per_packet / c),
                efficiency,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyRow {
    pub hops: usize,
    pub cycles: f64,
}

impl CsvRow for LatencyRow {
    const HEADER: &'static str = "hops,cycles";
    fn fields(&self) -> String {
        format!("{},{}", self.hops, self.cycles)
    }
}

/// Ping-pong of one element between rank 0 and the rank `hops` away; reports
/// half the round trip of the last repetition. Zero hops ping-pongs between two
/// programs on rank 0 over two ports.
pub fn bench_latency(cfg: &BenchConfig) -> Result<Vec<LatencyRow>> {
    let hops = if cfg.hops.is_empty() {
        vec![1, 4, 7]
    } else {
        cfg.hops.clone()
    };
    let reps = cfg.reps().max(2);
    let mut rows = Vec::new();
    for &h in &hops {
        let f = bench_fabric(cfg, || make_bus(8), runtime(false))?;
        let peer = rank_at(&f, h)?;
        let rep = f.run(vec![
            Program::new(0, move |ctx| {
                let w = ctx.world();
                let mut rtt = 0;
                for i in 0..reps {
                    let t0 = ctx.now();
                    ctx.open_send_channel::<i32>(1, peer as usize, PING_PORT, &w)?
                        .push(i as i32)?;
                    let v = ctx.open_recv_channel::<i32>(1, peer as usize, PONG_PORT, &w)?.pop()?;
                    rtt = ctx.now() - t0;
                    if v != i as i32 {
                        return Err(SmiError::ProtocolViolation(format!("latency: echo {v} != {i}")));
                    }
                }
                Ok(rtt)
            }),
            Program::new(peer, move |ctx| {
                let w = ctx.world();
                for _ in 0..reps {
                    let v = ctx.open_recv_channel::<i32>(1, 0, PING_PORT, &w)?.pop()?;
                    ctx.open_send_channel::<i32>(1, 0, PONG_PORT, &w)?.push(v)?;
                }
                Ok(0)
            }),
        ])?;
        rows.push(LatencyRow {
            hops: h,
            cycles: rep.outputs[0] as f64 / 2.0,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectiveKind {
    Bcast,
    Reduce,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectiveRow {
    pub kind: CollectiveKind,
    pub topology: &'static str,
    pub ranks: usize,
    pub size: usize,
    pub cycles: u64,
}

impl CsvRow for CollectiveRow {
    const HEADER: &'static str = "kind,topology,ranks,size,cycles";
    fn fields(&self) -> String {
        let k = match self.kind {
            CollectiveKind::Bcast => "bcast",
            CollectiveKind::Reduce => "reduce",
        };
        format!("{k},{},{},{},{}", self.topology, self.ranks, self.size, self.cycles)
    }
}

fn collective_value(rank: usize, j: usize) -> f32 {
    ((rank * 7919 + j * 104_729) % 1000) as f32 / 8.0 - 60.0
}

/// One broadcast or reduction (ADD, float) rooted at rank 0. Checks the result
/// against the sequential oracle and returns the completion cycle.
pub fn run_collective(f: &Fabric, kind: CollectiveKind, size: usize) -> Result<u64> {
    let n = f.num_ranks();
    let rep = f.run_spmd(|ctx| {
        let w = ctx.world();
        let me = ctx.rank() as usize;
        let mut out = Vec::with_capacity(size);
        match kind {
            CollectiveKind::Bcast => {
                let mut ch = ctx.open_bcast_channel::<f32>(size, BCAST_PORT, 0, &w)?;
                for j in 0..size {
                    let mut v = if me == 0 { collective_value(0, j) } else { 0.0 };
                    ch.bcast(&mut v)?;
                    out.push(v);
                }
            }
            CollectiveKind::Reduce => {
                let mut ch = ctx.open_reduce_channel::<f32>(size, ReduceOp::Add, REDUCE_PORT, 0, &w)?;
                for j in 0..size {
                    let mut v = 0.0;
                    ch.reduce(collective_value(me, j), &mut v)?;
                    out.push(v);
                }
            }
        }
        Ok(out)
    })?;
    for (me, out) in rep.outputs.iter().enumerate() {
        let want: Vec<f32> = match kind {
            CollectiveKind::Bcast => (0..size).map(|j| collective_value(0, j)).collect(),
            CollectiveKind::Reduce if me == 0 => (0..size)
                .map(|j| fold(ReduceOp::Add, (0..n).map(|r| collective_value(r, j))).unwrap())
                .collect(),
            CollectiveKind::Reduce => continue,
        };
        if out.iter().map(|x| x.to_bits()).ne(want.iter().map(|x| x.to_bits())) {
            return Err(SmiError::ProtocolViolation(format!(
                "{kind:?} result differs from oracle at rank {me}"
            )));
        }
    }
    Ok(rep.cycles)
}

type ShapeFn = fn() -> Result<TopologySpec>;

/// Bcast and Reduce on 4 and 8 ranks, bus and torus.
pub fn bench_collectives(cfg: &BenchConfig) -> Result<Vec<CollectiveRow>> {
    let sizes = if cfg.sizes.is_empty() {
        vec![1, 16, 128]
    } else {
        cfg.sizes.clone()
    };
    let shapes: [(&'static str, usize, ShapeFn); 4] = [
        ("bus", 4, || make_bus(4)),
        ("torus", 4, || make_torus(2, 2)),
        ("bus", 8, || make_bus(8)),
        ("torus", 8, || make_torus(2, 4)),
    ];
    let mut rows = Vec::new();
    for kind in [CollectiveKind::Bcast, CollectiveKind::Reduce] {
        for (name, ranks, make) in shapes {
            let f = Fabric::with_generated_routes(make()?, standard_ports(), runtime(false))?;
            for &size in &sizes {
                rows.push(CollectiveRow {
                    kind,
                    topology: name,
                    ranks,
                    size,
                    cycles: run_collective(&f, kind, size)?,
                });
            }
        }
    }
    Ok(rows)
}
