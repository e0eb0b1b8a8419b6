use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use super::link::{Link, LinkDesc, LinkId, LinkStats, Node, Progress};
use super::trace::{TraceEvent, TraceKind};
use crate::config::{PortMap, RuntimeConfig};
use crate::error::{Result, SmiError};
use crate::packet::{NetworkPacket, OpType};
use crate::routing::RoutingTables;

/// Per-(rank, port) application counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EndpointStats {
    pub elements_pushed: u64,
    pub elements_popped: u64,
    pub data_sent: u64,
    pub data_received: u64,
    pub credits_sent: u64,
    pub credits_received: u64,
    pub syncs_sent: u64,
    pub syncs_received: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Claim {
    Send,
    Recv,
    Collective,
}

impl Claim {
    fn name(self) -> &'static str {
        match self {
            Claim::Send => "send",
            Claim::Recv => "receive",
            Claim::Collective => "collective",
        }
    }
}

#[derive(Debug, Default)]
pub(crate) struct EndpointState {
    busy: [bool; 3],
    /// Packets taken off the delivery link before anyone asked for them, by (op, src).
    stash: BTreeMap<(u8, u8), VecDeque<NetworkPacket>>,
    pub stats: EndpointStats,
}

#[derive(Debug)]
pub(crate) struct AppPort {
    pub to_cks: LinkId,
    pub from_ckr: LinkId,
    pub state: Mutex<EndpointState>,
}

/// Everything a run's threads share: links, application endpoints, trace, and
/// the bookkeeping the schedulers use for progress and abort.
pub struct Shared<'s> {
    tables: &'s RoutingTables,
    ports: &'s PortMap,
    config: &'s RuntimeConfig,
    num_ranks: usize,
    links: Vec<Mutex<Link>>,
    descs: Vec<LinkDesc>,
    app_ports: BTreeMap<(u8, u8), AppPort>,
    trace: Option<Mutex<Vec<TraceEvent>>>,
    now: AtomicU64,
    activity: AtomicU64,
    pub(crate) progress: Progress,
    concurrent: bool,
    abort: AtomicBool,
    blocked: Mutex<BTreeMap<usize, String>>,
}

impl<'s> Shared<'s> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        tables: &'s RoutingTables,
        ports: &'s PortMap,
        config: &'s RuntimeConfig,
        num_ranks: usize,
        links: Vec<Link>,
        descs: Vec<LinkDesc>,
        app_ports: BTreeMap<(u8, u8), (LinkId, LinkId)>,
        concurrent: bool,
    ) -> Self {
        Shared {
            tables,
            ports,
            config,
            num_ranks,
            links: links.into_iter().map(Mutex::new).collect(),
            descs,
            app_ports: app_ports
                .into_iter()
                .map(|(k, (to_cks, from_ckr))| {
                    (
                        k,
                        AppPort {
                            to_cks,
                            from_ckr,
                            state: Mutex::new(EndpointState::default()),
                        },
                    )
                })
                .collect(),
            trace: config.trace.then(|| Mutex::new(Vec::new())),
            now: AtomicU64::new(0),
            activity: AtomicU64::new(0),
            progress: Progress::default(),
            concurrent,
            abort: AtomicBool::new(false),
            blocked: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn tables(&self) -> &'s RoutingTables {
        self.tables
    }

    pub fn ports(&self) -> &'s PortMap {
        self.ports
    }

    pub fn config(&self) -> &'s RuntimeConfig {
        self.config
    }

    pub fn num_ranks(&self) -> usize {
        self.num_ranks
    }

    pub fn is_concurrent(&self) -> bool {
        self.concurrent
    }

    pub fn now(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    pub(crate) fn set_now(&self, c: u64) {
        self.now.store(c, Ordering::SeqCst);
    }

    pub(crate) fn activity(&self) -> u64 {
        self.activity.load(Ordering::SeqCst)
    }

    pub(crate) fn note_activity(&self) {
        self.activity.fetch_add(1, Ordering::SeqCst);
        if self.concurrent {
            self.progress.bump();
        }
    }

    pub fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }

    pub(crate) fn abort(&self) {
        self.abort.store(true, Ordering::SeqCst);
        self.progress.bump();
    }

    pub(crate) fn set_blocked(&self, program: usize, what: Option<&str>) {
        let mut b = self.blocked.lock().unwrap();
        match what {
            Some(w) => {
                if b.get(&program).map(String::as_str) != Some(w) {
                    b.insert(program, w.to_string());
                }
            }
            None => {
                b.remove(&program);
            }
        }
    }

    pub(crate) fn push_link(&self, id: LinkId, now: u64, pkt: NetworkPacket) -> bool {
        let ok = self.links[id].lock().unwrap().push(now, pkt);
        if ok {
            self.note_activity();
        }
        ok
    }

    pub(crate) fn pop_link(&self, id: LinkId, now: u64) -> Option<NetworkPacket> {
        let p = self.links[id].lock().unwrap().pop_ready(now);
        if p.is_some() {
            self.note_activity();
        }
        p
    }

    pub(crate) fn link_ready(&self, id: LinkId, now: u64) -> bool {
        self.links[id].lock().unwrap().has_ready(now)
    }

    pub(crate) fn record(&self, now: u64, at: Node, kind: TraceKind, link: LinkId, pkt: &NetworkPacket) {
        if let Some(t) = &self.trace {
            let cycle = if self.concurrent { 0 } else { now };
            t.lock().unwrap().push(TraceEvent {
                cycle,
                at,
                kind,
                link,
                header: pkt.header,
            });
        }
    }

    pub(crate) fn app_port(&self, rank: u8, port: u8) -> Result<&AppPort> {
        self.app_ports.get(&(rank, port)).ok_or_else(|| {
            if self.ports.get(port).is_none() {
                SmiError::UndeclaredPort(port)
            } else {
                SmiError::ContractViolation(format!("rank {rank} is not an endpoint of port {port}"))
            }
        })
    }

    pub(crate) fn claim(&self, rank: u8, port: u8, c: Claim) -> Result<()> {
        let mut st = self.app_port(rank, port)?.state.lock().unwrap();
        let slot = &mut st.busy[c as usize];
        if *slot {
            return Err(SmiError::PortBusy { port, what: c.name() });
        }
        *slot = true;
        Ok(())
    }

    pub(crate) fn release(&self, rank: u8, port: u8, c: Claim) {
        if let Ok(ap) = self.app_port(rank, port) {
            ap.state.lock().unwrap().busy[c as usize] = false;
        }
    }

    pub(crate) fn with_stats<R>(&self, rank: u8, port: u8, f: impl FnOnce(&mut EndpointStats) -> R) -> R {
        let ap = self.app_port(rank, port).expect("endpoint exists");
        f(&mut ap.state.lock().unwrap().stats)
    }

    /// Hands `pkt` to the CK_S serving `port`; false when the link is full.
    pub(crate) fn try_emit(&self, rank: u8, port: u8, pkt: NetworkPacket) -> Result<bool> {
        let ap = self.app_port(rank, port)?;
        let now = self.now();
        if !self.push_link(ap.to_cks, now, pkt) {
            return Ok(false);
        }
        self.record(now, Node::App { rank, port }, TraceKind::Emit, ap.to_cks, &pkt);
        let mut st = ap.state.lock().unwrap();
        match pkt.header.op {
            OpType::Data => st.stats.data_sent += 1,
            OpType::Credit => st.stats.credits_sent += 1,
            OpType::SyncReady => st.stats.syncs_sent += 1,
        }
        Ok(true)
    }

    /// Takes the oldest delivered packet with the given op from `src`. Packets
    /// of other kinds drained on the way are stashed for later requests.
    pub(crate) fn take(&self, rank: u8, port: u8, op: OpType, src: u8) -> Result<Option<NetworkPacket>> {
        let ap = self.app_port(rank, port)?;
        let mut st = ap.state.lock().unwrap();
        let key = (op.code(), src);
        if let Some(p) = st.stash.get_mut(&key).and_then(VecDeque::pop_front) {
            return Ok(Some(p));
        }
        let now = self.now();
        while let Some(p) = self.pop_link(ap.from_ckr, now) {
            self.record(now, Node::App { rank, port }, TraceKind::Consume, ap.from_ckr, &p);
            match p.header.op {
                OpType::Data => st.stats.data_received += 1,
                OpType::Credit => st.stats.credits_received += 1,
                OpType::SyncReady => st.stats.syncs_received += 1,
            }
            if (p.header.op.code(), p.header.src) == key {
                return Ok(Some(p));
            }
            st.stash
                .entry((p.header.op.code(), p.header.src))
                .or_default()
                .push_back(p);
        }
        Ok(None)
    }

    pub(crate) fn link_snapshot(&self) -> Vec<(LinkDesc, usize, LinkStats)> {
        self.descs
            .iter()
            .zip(&self.links)
            .map(|(d, l)| {
                let l = l.lock().unwrap();
                (*d, l.len(), l.stats)
            })
            .collect()
    }

    pub(crate) fn endpoint_snapshot(&self) -> BTreeMap<(u8, u8), (EndpointStats, usize)> {
        self.app_ports
            .iter()
            .map(|(k, ap)| {
                let st = ap.state.lock().unwrap();
                (*k, (st.stats, st.stash.values().map(VecDeque::len).sum()))
            })
            .collect()
    }

    pub(crate) fn take_trace(&self) -> Vec<TraceEvent> {
        self.trace
            .as_ref()
            .map(|t| std::mem::take(&mut *t.lock().unwrap()))
            .unwrap_or_default()
    }

    /// Human-readable state for deadlock reports.
    pub(crate) fn dump(&self, pending: &[(Node, NetworkPacket)]) -> String {
        let mut out = String::new();
        for (d, len, _) in self.link_snapshot() {
            if len > 0 {
                out.push_str(&format!("  link {} -> {}: {len} queued\n", d.from, d.to));
            }
        }
        for (n, p) in pending {
            out.push_str(&format!("  {n} holds {:?}\n", p.header));
        }
        for (i, w) in self.blocked.lock().unwrap().iter() {
            out.push_str(&format!("  program {i} blocked in {w}\n"));
        }
        out
    }
}
