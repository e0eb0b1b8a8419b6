//! Helpers shared by the integration suites and the acceptance target.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use smi::channel::{Communicator, Protocol};
use smi::collectives::{fold, ReduceOp, Reducible};
use smi::config::{PortMap, RuntimeConfig};
use smi::harness::standard_ports;
use smi::packet::{DataType, Element, OpType};
use smi::topology::{make_bus, make_torus, Endpoint, TopologySpec};
use smi::transport::{Fabric, Node, Program, TraceEvent, TraceKind};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Deterministic values with arbitrary bit patterns, NaNs included.
pub trait Sample: Element + Sync {
    fn sample(rng: &mut StdRng) -> Self;
}

impl Sample for i8 {
    fn sample(rng: &mut StdRng) -> Self {
        rng.gen()
    }
}
impl Sample for i16 {
    fn sample(rng: &mut StdRng) -> Self {
        rng.gen()
    }
}
impl Sample for i32 {
    fn sample(rng: &mut StdRng) -> Self {
        rng.gen()
    }
}
impl Sample for f32 {
    fn sample(rng: &mut StdRng) -> Self {
        f32::from_bits(rng.gen())
    }
}
impl Sample for f64 {
    fn sample(rng: &mut StdRng) -> Self {
        f64::from_bits(rng.gen())
    }
}

pub fn bytes_of<T: Element>(xs: &[T]) -> Vec<u8> {
    let w = T::DTYPE.size_bytes();
    let mut out = vec![0u8; xs.len() * w];
    for (x, chunk) in xs.iter().zip(out.chunks_mut(w)) {
        x.write_le(chunk);
    }
    out
}

pub fn same_bits<T: Element>(a: &[T], b: &[T]) -> bool {
    bytes_of(a) == bytes_of(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Bus(usize),
    Torus(usize, usize),
}

impl Shape {
    pub fn build(self) -> TopologySpec {
        match self {
            Shape::Bus(n) => make_bus(n).unwrap(),
            Shape::Torus(r, c) => make_torus(r, c).unwrap(),
        }
    }

    pub fn ranks(self) -> usize {
        match self {
            Shape::Bus(n) => n,
            Shape::Torus(r, c) => r * c,
        }
    }
}

pub const P2P_SHAPES: [Shape; 5] = [
    Shape::Bus(2),
    Shape::Bus(4),
    Shape::Bus(8),
    Shape::Torus(2, 2),
    Shape::Torus(2, 4),
];
pub const P2P_PORTS: u8 = 4;
pub const P2P_PORT_LIST: [u8; 4] = [0, 1, 2, 3];

/// One randomized point-to-point transfer.
#[derive(Clone, Debug)]
pub struct P2pCase {
    pub shape: usize,
    pub src: u8,
    pub dst: u8,
    pub port: u8,
    pub dtype: DataType,
    pub count: usize,
    pub k: usize,
    pub seed: u64,
}

impl P2pCase {
    /// A case on a random fabric of `fabrics` and a random port of `ports`.
    pub fn random(rng: &mut StdRng, fabrics: &[Fabric], ports: &[u8]) -> Self {
        let shape = rng.gen_range(0..fabrics.len());
        let n = fabrics[shape].num_ranks() as u8;
        let dtype = DataType::ALL[rng.gen_range(0..DataType::ALL.len())];
        let count = match rng.gen_range(0..4) {
            0 => rng.gen_range(1..=dtype.max_elems_per_packet()),
            1 | 2 => rng.gen_range(1..=120),
            _ => rng.gen_range(120..=400),
        };
        let eager = rng.gen_bool(0.5);
        let k = if eager {
            rng.gen_range(count..=count + 64)
        } else {
            rng.gen_range(1..count.max(2))
        };
        P2pCase {
            shape,
            src: rng.gen_range(0..n),
            dst: rng.gen_range(0..n),
            port: ports[rng.gen_range(0..ports.len())],
            dtype,
            count,
            k,
            seed: rng.gen(),
        }
    }

    pub fn expected_protocol(&self) -> Protocol {
        if self.k >= self.count {
            Protocol::Eager
        } else {
            Protocol::Credit
        }
    }

    pub fn budget(&self) -> usize {
        self.k.div_ceil(self.dtype.max_elems_per_packet()).max(1)
    }
}

/// Cycle-mode fabrics for every shape in `P2P_SHAPES`, tracing on.
pub fn p2p_fabrics() -> Vec<Fabric> {
    P2P_SHAPES
        .iter()
        .map(|s| {
            let cfg = RuntimeConfig {
                trace: true,
                ..RuntimeConfig::default()
            };
            Fabric::with_generated_routes(s.build(), PortMap::p2p(P2P_PORTS), cfg).unwrap()
        })
        .collect()
}

/// Largest number of DATA packets of one channel that were emitted by the
/// sender but not yet taken by the receiver.
pub fn max_in_flight(trace: &[TraceEvent], src: u8, dst: u8, port: u8) -> usize {
    let (mut cur, mut max) = (0i64, 0i64);
    for e in trace.iter().filter(|e| e.is_data() && e.header.port == port) {
        match (e.kind, e.at) {
            (TraceKind::Emit, Node::App { rank, .. }) if rank == src && e.header.dst == dst => cur += 1,
            (TraceKind::Consume, Node::App { rank, .. }) if rank == dst && e.header.src == src => cur -= 1,
            _ => {}
        }
        max = max.max(cur);
    }
    max as usize
}

pub fn emitted(trace: &[TraceEvent], rank: u8, port: u8, op: OpType) -> usize {
    trace
        .iter()
        .filter(|e| e.kind == TraceKind::Emit && e.header.op == op && e.header.port == port)
        .filter(|e| matches!(e.at, Node::App { rank: r, .. } if r == rank))
        .count()
}

fn p2p_typed<T: Sample>(f: &Fabric, c: &P2pCase) -> Check {
    let mut rng = StdRng::seed_from_u64(c.seed);
    let data: Vec<T> = (0..c.count).map(|_| T::sample(&mut rng)).collect();
    let mut f = f.clone();
    f.config_mut().k.insert(c.port, c.k);
    let (src, dst, port, count) = (c.src, c.dst, c.port, c.count);
    let data_ref = &data;
    let rep = f
        .run(vec![
            Program::new(src, move |ctx| {
                let mut ch = ctx.open_send_channel::<T>(count, dst as usize, port, &ctx.world())?;
                for v in data_ref {
                    ch.push(*v)?;
                }
                Ok((ch.protocol(), Vec::new()))
            }),
            Program::new(dst, move |ctx| {
                let mut ch = ctx.open_recv_channel::<T>(count, src as usize, port, &ctx.world())?;
                let got = (0..count).map(|_| ch.pop()).collect::<smi::Result<Vec<T>>>()?;
                Ok((ch.protocol(), got))
            }),
        ])
        .map_err(|e| format!("{c:?}: run failed: {e}"))?;
    let (send_proto, _) = &rep.outputs[0];
    let (recv_proto, got) = &rep.outputs[1];
    ensure!(same_bits(got, &data), "{c:?}: popped sequence differs from pushed");
    ensure!(
        *send_proto == c.expected_protocol() && *recv_proto == c.expected_protocol(),
        "{c:?}: protocol {send_proto:?}/{recv_proto:?}"
    );
    let credits = emitted(&rep.trace, dst, port, OpType::Credit);
    match c.expected_protocol() {
        Protocol::Eager => ensure!(credits == 0, "{c:?}: eager channel sent {credits} credits"),
        Protocol::Credit => {
            let inflight = max_in_flight(&rep.trace, src, dst, port);
            ensure!(
                inflight <= c.budget(),
                "{c:?}: {inflight} packets in flight, budget {}",
                c.budget()
            );
        }
    }
    ensure!(rep.residual_packets == 0, "{c:?}: packets left in the fabric");
    Ok(())
}

pub fn run_p2p_case(fabrics: &[Fabric], c: &P2pCase) -> Check {
    let f = &fabrics[c.shape];
    match c.dtype {
        DataType::Char => p2p_typed::<i8>(f, c),
        DataType::Short => p2p_typed::<i16>(f, c),
        DataType::Int => p2p_typed::<i32>(f, c),
        DataType::Float => p2p_typed::<f32>(f, c),
        DataType::Double => p2p_typed::<f64>(f, c),
    }
}

pub const BCAST_PORT: u8 = 5;
pub const SCATTER_PORT: u8 = 6;
pub const GATHER_PORT: u8 = 7;
pub const REDUCE_PORT: u8 = 8;
pub const TILE: usize = 8;

/// Runtime settings of the collective suites.
pub fn collective_runtime() -> RuntimeConfig {
    RuntimeConfig {
        reduce_credits: TILE,
        trace: true,
        ..RuntimeConfig::default()
    }
}

/// Fabric over the harness port map, so collectives use ports 5 to 8.
pub fn collective_fabric(topo: TopologySpec) -> Fabric {
    Fabric::with_generated_routes(topo, standard_ports(), collective_runtime()).unwrap()
}

pub fn contribution(rank: usize, j: usize) -> f32 {
    ((rank * 131 + j * 17) % 97) as f32 * 0.37 - 11.0
}

pub fn reduce_oracle<T: Reducible>(op: ReduceOp, size: usize, count: usize, f: impl Fn(usize, usize) -> T) -> Vec<T> {
    (0..count)
        .map(|j| fold(op, (0..size).map(|r| f(r, j))).unwrap())
        .collect()
}

type CollOut = (Vec<i32>, Vec<i16>, Vec<f64>, Vec<Vec<f32>>);

/// Bcast (i32), Scatter (i16), Gather (f64) and Reduce (f32, every op) over
/// `members` with the given comm-rank root, checked against sequential oracles
/// and against the wire-order and tile rules.
pub fn collective_case(f: &Fabric, members: &[u8], root: usize, count: usize) -> Check {
    let comm = Communicator::new(members.to_vec()).map_err(|e| e.to_string())?;
    let size = members.len();
    let tag = format!("members {members:?} root {root} count {count}");
    let mut programs = Vec::new();
    for &w in members {
        let comm = comm.clone();
        programs.push(Program::new(w, move |ctx| -> smi::Result<CollOut> {
            let me = ctx.comm_rank(&comm)?;
            let mut bc = ctx.open_bcast_channel::<i32>(count, BCAST_PORT, root, &comm)?;
            let mut got_b = Vec::new();
            for j in 0..count {
                let mut v = if me == root { (j * 3) as i32 - 50 } else { -1 };
                bc.bcast(&mut v)?;
                got_b.push(v);
            }
            let mut sc = ctx.open_scatter_channel::<i16>(count, SCATTER_PORT, root, &comm)?;
            let snd: Vec<i16> = (0..size * count).map(|i| i as i16).collect();
            let mut got_s = vec![0i16; count];
            sc.scatter(&snd, &mut got_s)?;
            let mut ga = ctx.open_gather_channel::<f64>(count, GATHER_PORT, root, &comm)?;
            let mine: Vec<f64> = (0..count).map(|j| (me * 1000 + j) as f64 + 0.25).collect();
            let mut got_g = vec![0.0; if me == root { size * count } else { 0 }];
            ga.gather(&mine, &mut got_g)?;
            let mut red = Vec::new();
            for op in ReduceOp::ALL {
                let mut rc = ctx.open_reduce_channel::<f32>(count, op, REDUCE_PORT, root, &comm)?;
                let mut out = Vec::new();
                for j in 0..count {
                    let mut r = f32::NAN;
                    rc.reduce(contribution(me, j), &mut r)?;
                    out.push(r);
                }
                red.push(out);
            }
            Ok((got_b, got_s, got_g, red))
        }));
    }
    let rep = f.run(programs).map_err(|e| format!("{tag}: {e}"))?;
    for (me, (b, s, g, red)) in rep.outputs.iter().enumerate() {
        let want_b: Vec<i32> = (0..count).map(|j| (j * 3) as i32 - 50).collect();
        ensure!(*b == want_b, "{tag}: bcast at comm rank {me}");
        let want_s: Vec<i16> = (me * count..(me + 1) * count).map(|i| i as i16).collect();
        ensure!(*s == want_s, "{tag}: scatter block at comm rank {me}");
        if me == root {
            let want_g: Vec<f64> = (0..size)
                .flat_map(|r| (0..count).map(move |j| (r * 1000 + j) as f64 + 0.25))
                .collect();
            ensure!(same_bits(g, &want_g), "{tag}: gather buffer");
            for (op, out) in ReduceOp::ALL.iter().zip(red) {
                let want = reduce_oracle(*op, size, count, contribution);
                ensure!(same_bits(out, &want), "{tag}: reduce {op:?}");
            }
        }
    }
    ensure!(rep.residual_packets == 0, "{tag}: packets left in the fabric");
    let root_w = members[root];
    let comm_of = |w: u8| members.iter().position(|&m| m == w).unwrap();
    check_sequenced(&rep.trace, root_w, GATHER_PORT, false, &comm_of).map_err(|e| format!("{tag}: gather {e}"))?;
    check_sequenced(&rep.trace, root_w, SCATTER_PORT, true, &comm_of).map_err(|e| format!("{tag}: scatter {e}"))?;
    check_tiles(&rep.trace, root_w, REDUCE_PORT, TILE, count, size - 1).map_err(|e| format!("{tag}: reduce {e}"))?;
    Ok(())
}

/// Per-rank DATA streams to or from the root must not overlap on the wire and
/// must follow ascending communicator rank.
pub fn check_sequenced(
    trace: &[TraceEvent],
    root: u8,
    port: u8,
    outbound: bool,
    comm_of: &dyn Fn(u8) -> usize,
) -> Check {
    // (peer, first emit, end of stream) in order of first emit. Outbound streams
    // end at the root's last emit, inbound ones when the root takes the last packet.
    let mut spans: Vec<(u8, usize, usize)> = Vec::new();
    for (i, e) in trace.iter().enumerate() {
        if !e.is_data() || e.header.port != port {
            continue;
        }
        let peer = if outbound { e.header.dst } else { e.header.src };
        let relevant = if outbound {
            e.header.src == root
        } else {
            e.header.dst == root
        };
        if !relevant || peer == root {
            continue;
        }
        let ends_span = if outbound { TraceKind::Emit } else { TraceKind::Consume };
        if e.kind == TraceKind::Emit && !spans.iter().any(|s| s.0 == peer) {
            spans.push((peer, i, i));
        }
        if e.kind == ends_span {
            if let Some(s) = spans.iter_mut().find(|s| s.0 == peer) {
                s.2 = i;
            }
        }
    }
    for w in spans.windows(2) {
        let (a, b) = (w[0], w[1]);
        ensure!(
            comm_of(a.0) < comm_of(b.0),
            "order: rank {} streamed before rank {}",
            a.0,
            b.0
        );
        ensure!(b.1 > a.2, "overlap: rank {} started before rank {} finished", b.0, a.0);
    }
    Ok(())
}

/// Whenever a contributor emits an element of tile `g`, every contributor has
/// already emitted all of tile `g - 1`. Tiles are numbered across consecutive
/// reductions on the same port, each of `count` elements.
pub fn check_tiles(trace: &[TraceEvent], root: u8, port: u8, tile: usize, count: usize, contributors: usize) -> Check {
    use std::collections::BTreeMap;
    if count == 0 {
        return Ok(());
    }
    let per_op = count.div_ceil(tile);
    let done_after = |g: usize| (g / per_op) * count + (((g % per_op) + 1) * tile).min(count);
    let mut sent: BTreeMap<u8, usize> = BTreeMap::new();
    for e in trace {
        if e.kind != TraceKind::Emit || !e.is_data() || e.header.port != port || e.header.dst != root {
            continue;
        }
        let total = sent.get(&e.header.src).copied().unwrap_or(0);
        let first = total % count;
        let g = (total / count) * per_op + first / tile;
        if g > 0 {
            let need = done_after(g - 1);
            let behind = sent.len() < contributors || sent.values().any(|&s| s < need);
            ensure!(
                !behind,
                "rank {} entered tile {g} while another rank had not finished tile {}",
                e.header.src,
                g - 1
            );
        }
        ensure!(
            first / tile == (first + e.header.valid_count() as usize - 1) / tile,
            "packet from rank {} spans a tile boundary",
            e.header.src
        );
        *sent.entry(e.header.src).or_default() += e.header.valid_count() as usize;
    }
    Ok(())
}

/// Comm members for the collective matrix on an 8-rank fabric.
pub fn members_for(size: usize) -> Vec<u8> {
    match size {
        2 => vec![5, 2],
        4 => vec![1, 3, 4, 6],
        _ => (0..size as u8).collect(),
    }
}

/// Roots {0, size-1, pseudo-random}.
pub fn roots_for(size: usize, rng: &mut StdRng) -> Vec<usize> {
    let mut roots = vec![0, size - 1, rng.gen_range(0..size)];
    roots.dedup();
    roots
}

/// A random connected topology with at most `max_ranks` ranks and `max_ifaces`
/// interfaces per rank: a random spanning tree plus random extra links.
pub fn random_topology(rng: &mut StdRng, max_ranks: usize, max_ifaces: u8) -> TopologySpec {
    loop {
        let ifaces = rng.gen_range(1..=max_ifaces);
        let n = if ifaces == 1 { 2 } else { rng.gen_range(2..=max_ranks) };
        let mut used = vec![0u8; n];
        let mut conns = Vec::new();
        let mut ok = true;
        for v in 1..n {
            let free: Vec<usize> = (0..v).filter(|&u| used[u] < ifaces).collect();
            if free.is_empty() {
                ok = false;
                break;
            }
            let u = free[rng.gen_range(0..free.len())];
            conns.push((Endpoint::new(u as u8, used[u]), Endpoint::new(v as u8, used[v])));
            used[u] += 1;
            used[v] += 1;
        }
        if !ok {
            continue;
        }
        for _ in 0..rng.gen_range(0..=n * 2) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b && used[a] < ifaces && used[b] < ifaces {
                conns.push((Endpoint::new(a as u8, used[a]), Endpoint::new(b as u8, used[b])));
                used[a] += 1;
                used[b] += 1;
            }
        }
        return TopologySpec::new(n, ifaces, conns).unwrap();
    }
}
