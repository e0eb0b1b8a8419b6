use std::collections::BTreeMap;

use super::link::{LinkId, Node};
use super::shared::Shared;
use super::trace::TraceKind;
use crate::error::{Result, SmiError};
use crate::packet::NetworkPacket;
use crate::routing::{CkrAction, CksAction, RoutingTables};

/// Receivers sort before senders: that is the per-rank stepping order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CkKind {
    Receiver,
    Sender,
}

/// Where a CK unit sends a packet next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Forwarding {
    ToPairedCkr,
    ToSiblingCks(u8),
    EmitIface,
    ToPairedCks,
    ToApp(u8),
    ToSiblingCkr(u8),
}

/// Forwarding decision of unit (`kind`, `pair`) on `rank` for `pkt`.
pub fn route_packet(
    tables: &RoutingTables,
    rank: u8,
    kind: CkKind,
    pair: u8,
    pkt: &NetworkPacket,
) -> Result<Forwarding> {
    let h = &pkt.header;
    let unroutable = |reason: String| SmiError::Unroutable { rank, reason };
    match kind {
        CkKind::Sender => {
            if h.dst == rank {
                return Ok(Forwarding::ToPairedCkr);
            }
            match tables.cks(rank, pair).lookup(h.dst) {
                CksAction::EmitIface => Ok(Forwarding::EmitIface),
                CksAction::ForwardLocalCks(j) if j != pair && j < tables.pairs() => Ok(Forwarding::ToSiblingCks(j)),
                a => Err(unroutable(format!(
                    "CK_S {pair} has entry {a:?} for destination {} ({h:?})",
                    h.dst
                ))),
            }
        }
        CkKind::Receiver => {
            if h.dst != rank {
                return Ok(Forwarding::ToPairedCks);
            }
            match tables.ckr(rank, pair).lookup(h.port) {
                CkrAction::ToApp => Ok(Forwarding::ToApp(h.port)),
                CkrAction::ForwardLocalCkr(j) if j != pair && j < tables.pairs() => Ok(Forwarding::ToSiblingCkr(j)),
                a => Err(unroutable(format!(
                    "CK_R {pair} has entry {a:?} for port {} ({h:?})",
                    h.port
                ))),
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UnitStats {
    pub accepts: u64,
    pub forwards: u64,
    /// Cycles spent holding a packet whose output link was full.
    pub stalls: u64,
    pub accepts_per_input: Vec<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// A packet was accepted or forwarded.
    Progress,
    /// The polled input was empty; the pointer moved on.
    Polled,
    /// Holding a packet that cannot leave yet.
    Stalled,
    /// No input has data.
    Idle,
}

/// A CK_S or CK_R forwarding unit.
#[derive(Clone, Debug)]
pub struct CkUnit {
    pub rank: u8,
    pub kind: CkKind,
    pub pair: u8,
    r: u32,
    inputs: Vec<LinkId>,
    paired: LinkId,
    siblings: Vec<Option<LinkId>>,
    wire: Option<LinkId>,
    apps: BTreeMap<u8, LinkId>,
    cur: usize,
    reads: u32,
    pending: Option<(NetworkPacket, LinkId)>,
    pub stats: UnitStats,
}

impl CkUnit {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        rank: u8,
        kind: CkKind,
        pair: u8,
        r: u32,
        inputs: Vec<LinkId>,
        paired: LinkId,
        siblings: Vec<Option<LinkId>>,
        wire: Option<LinkId>,
        apps: BTreeMap<u8, LinkId>,
    ) -> Self {
        let n = inputs.len();
        CkUnit {
            rank,
            kind,
            pair,
            r,
            inputs,
            paired,
            siblings,
            wire,
            apps,
            cur: 0,
            reads: 0,
            pending: None,
            stats: UnitStats {
                accepts_per_input: vec![0; n],
                ..UnitStats::default()
            },
        }
    }

    pub fn node(&self) -> Node {
        match self.kind {
            CkKind::Sender => Node::Cks {
                rank: self.rank,
                pair: self.pair,
            },
            CkKind::Receiver => Node::Ckr {
                rank: self.rank,
                pair: self.pair,
            },
        }
    }

    pub fn inputs(&self) -> &[LinkId] {
        &self.inputs
    }

    pub fn pending(&self) -> Option<&NetworkPacket> {
        self.pending.as_ref().map(|(p, _)| p)
    }

    fn output(&self, f: Forwarding) -> Result<LinkId> {
        let missing = |what: String| SmiError::Unroutable {
            rank: self.rank,
            reason: what,
        };
        match f {
            Forwarding::ToPairedCkr | Forwarding::ToPairedCks => Ok(self.paired),
            Forwarding::ToSiblingCks(j) | Forwarding::ToSiblingCkr(j) => self
                .siblings
                .get(j as usize)
                .copied()
                .flatten()
                .ok_or_else(|| missing(format!("no local link to sibling {j}"))),
            Forwarding::EmitIface => self
                .wire
                .ok_or_else(|| missing(format!("iface {} is not wired", self.pair))),
            Forwarding::ToApp(p) => self
                .apps
                .get(&p)
                .copied()
                .ok_or_else(|| missing(format!("no application endpoint for port {p}"))),
        }
    }

    fn advance(&mut self) {
        self.cur = (self.cur + 1) % self.inputs.len();
        self.reads = 0;
    }

    /// One cycle: forward a held packet, or poll the current input. After an
    /// accept the unit stays on that input for up to R consecutive reads.
    pub(crate) fn step(&mut self, shared: &Shared<'_>, now: u64) -> Result<StepOutcome> {
        if let Some((pkt, out)) = self.pending.take() {
            if shared.push_link(out, now, pkt) {
                self.stats.forwards += 1;
                shared.record(now, self.node(), TraceKind::Forward, out, &pkt);
                return Ok(StepOutcome::Progress);
            }
            self.pending = Some((pkt, out));
            self.stats.stalls += 1;
            return Ok(StepOutcome::Stalled);
        }
        if !self.inputs.iter().any(|&l| shared.link_ready(l, now)) {
            return Ok(StepOutcome::Idle);
        }
        let input = self.inputs[self.cur];
        let Some(pkt) = shared.pop_link(input, now) else {
            self.advance();
            return Ok(StepOutcome::Polled);
        };
        self.stats.accepts += 1;
        self.stats.accepts_per_input[self.cur] += 1;
        self.reads += 1;
        if self.reads >= self.r {
            self.advance();
        }
        shared.record(now, self.node(), TraceKind::Accept, input, &pkt);
        let out = self.output(route_packet(shared.tables(), self.rank, self.kind, self.pair, &pkt)?)?;
        if shared.push_link(out, now, pkt) {
            self.stats.forwards += 1;
            shared.record(now, self.node(), TraceKind::Forward, out, &pkt);
        } else {
            self.pending = Some((pkt, out));
            self.stats.stalls += 1;
        }
        Ok(StepOutcome::Progress)
    }
}
