//! Point-to-point transient channels, communicators and the per-rank context
//! programs use to reach the fabric.

use std::collections::VecDeque;
use std::marker::PhantomData;
use std::time::Duration;

use crate::config::PortKind;
use crate::error::{Result, SmiError};
use crate::packet::{pack_elements, unpack_elements, Element, NetworkPacket, OpType, PacketHeader};
use crate::transport::{Claim, Go, Pacer, Shared, Turn};

/// Ordered set of world ranks. Communicator rank `i` is world rank `ranks[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Communicator {
    ranks: Vec<u8>,
}

impl Communicator {
    pub fn world(size: usize) -> Self {
        Communicator {
            ranks: (0..size).map(|r| r as u8).collect(),
        }
    }

    pub fn new(ranks: Vec<u8>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(SmiError::Config("empty communicator".into()));
        }
        let mut seen = [false; 256];
        for &r in &ranks {
            if std::mem::replace(&mut seen[r as usize], true) {
                return Err(SmiError::Config(format!("rank {r} listed twice in communicator")));
            }
        }
        Ok(Communicator { ranks })
    }

    pub fn size(&self) -> usize {
        self.ranks.len()
    }

    pub fn ranks(&self) -> &[u8] {
        &self.ranks
    }

    pub fn world_rank(&self, comm_rank: usize) -> Result<u8> {
        self.ranks.get(comm_rank).copied().ok_or(SmiError::RankOutOfRange {
            rank: comm_rank,
            size: self.size(),
        })
    }

    pub fn rank_of(&self, world: u8) -> Option<usize> {
        self.ranks.iter().position(|&r| r == world)
    }
}

/// Eager sends without handshakes; credit-based waits for the receiver's credits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Eager,
    Credit,
}

/// Handle a rank procedure uses to open channels and wait on the fabric.
pub struct RankContext<'s> {
    shared: &'s Shared<'s>,
    rank: u8,
    idx: usize,
    pacer: Pacer,
}

const WAIT_SLICE: Duration = Duration::from_millis(20);

impl<'s> RankContext<'s> {
    pub(crate) fn new(shared: &'s Shared<'s>, rank: u8, idx: usize, pacer: Pacer) -> Self {
        RankContext {
            shared,
            rank,
            idx,
            pacer,
        }
    }

    pub(crate) fn shared(&self) -> &'s Shared<'s> {
        self.shared
    }

    pub fn rank(&self) -> u8 {
        self.rank
    }

    pub fn num_ranks(&self) -> usize {
        self.shared.num_ranks()
    }

    pub fn world(&self) -> Communicator {
        Communicator::world(self.num_ranks())
    }

    /// Current simulated cycle (always 0 when free-running).
    pub fn now(&self) -> u64 {
        self.shared.now()
    }

    pub fn comm_rank(&self, comm: &Communicator) -> Result<usize> {
        comm.rank_of(self.rank).ok_or_else(|| {
            SmiError::ContractViolation(format!("rank {} is not a member of the communicator", self.rank))
        })
    }

    pub fn comm_size(&self, comm: &Communicator) -> usize {
        comm.size()
    }

    fn end_turn(&self) -> Result<()> {
        match &self.pacer {
            Pacer::Cycle { go, done } => {
                done.send((self.idx, Turn::Yield)).map_err(|_| SmiError::Aborted)?;
                match go.recv() {
                    Ok(Go::Run) => Ok(()),
                    _ => Err(SmiError::Aborted),
                }
            }
            Pacer::Concurrent => Ok(()),
        }
    }

    /// Retries `attempt` until it yields a value. In cycle mode every attempt
    /// costs one turn, so a program performs at most one element operation per cycle.
    pub(crate) fn block_on<R>(&self, what: &str, mut attempt: impl FnMut() -> Result<Option<R>>) -> Result<R> {
        loop {
            if self.shared.aborted() {
                return Err(SmiError::Aborted);
            }
            let seen = self.shared.progress.current();
            if let Some(v) = attempt()? {
                self.shared.set_blocked(self.idx, None);
                if !self.shared.is_concurrent() {
                    self.shared.note_activity();
                }
                self.end_turn()?;
                return Ok(v);
            }
            self.shared.set_blocked(self.idx, Some(what));
            match self.pacer {
                Pacer::Cycle { .. } => self.end_turn()?,
                Pacer::Concurrent => self.shared.progress.wait_change(seen, WAIT_SLICE),
            }
        }
    }

    /// Lets `cycles` cycles pass without touching the fabric.
    pub fn sleep_cycles(&self, cycles: u64) -> Result<()> {
        match self.pacer {
            Pacer::Cycle { .. } => {
                for _ in 0..cycles {
                    self.shared.note_activity();
                    self.end_turn()?;
                }
                Ok(())
            }
            Pacer::Concurrent => {
                std::thread::sleep(Duration::from_micros(cycles));
                Ok(())
            }
        }
    }

    pub(crate) fn header(&self, dst: u8, port: u8, op: OpType) -> PacketHeader {
        PacketHeader::control(self.rank, dst, port, op)
    }

    pub(crate) fn emit(&self, what: &str, port: u8, pkt: NetworkPacket) -> Result<()> {
        self.block_on(what, || Ok(self.shared.try_emit(self.rank, port, pkt)?.then_some(())))
    }

    pub(crate) fn take(&self, what: &str, port: u8, op: OpType, src: u8) -> Result<NetworkPacket> {
        self.block_on(what, || self.shared.take(self.rank, port, op, src))
    }

    /// Checks that `port` is declared for `kind` and, if typed, for `T`.
    pub(crate) fn check_port<T: Element>(&self, port: u8, kind: PortKind) -> Result<()> {
        let decl = self.shared.ports().get(port).ok_or(SmiError::UndeclaredPort(port))?;
        if decl.kind != kind {
            return Err(SmiError::ContractViolation(format!(
                "port {port} is declared {:?}, opened as {kind:?}",
                decl.kind
            )));
        }
        if let Some(d) = decl.dtype {
            if d != T::DTYPE {
                return Err(SmiError::ChannelMismatch(format!(
                    "port {port} carries {d:?}, opened with {:?}",
                    T::DTYPE
                )));
            }
        }
        self.shared.app_port(self.rank, port).map(|_| ())
    }

    pub(crate) fn claim(&self, port: u8, c: Claim) -> Result<()> {
        self.shared.claim(self.rank, port, c)
    }

    pub(crate) fn release(&self, port: u8, c: Claim) {
        self.shared.release(self.rank, port, c)
    }

    pub(crate) fn count_pushed(&self, port: u8, n: u64) {
        self.shared.with_stats(self.rank, port, |s| s.elements_pushed += n);
    }

    pub(crate) fn count_popped(&self, port: u8, n: u64) {
        self.shared.with_stats(self.rank, port, |s| s.elements_popped += n);
    }

    fn peer(&self, comm: &Communicator, comm_rank: usize) -> Result<u8> {
        self.comm_rank(comm)?;
        comm.world_rank(comm_rank)
    }

    fn budget<T: Element>(&self, port: u8, count: usize) -> (Protocol, usize) {
        let k = self.shared.config().k_for(port, T::DTYPE);
        let max = T::DTYPE.max_elems_per_packet();
        let protocol = if k >= count { Protocol::Eager } else { Protocol::Credit };
        (protocol, k.div_ceil(max).max(1))
    }

    /// Opens a send channel of `count` elements to communicator rank `dst`.
    /// Emits nothing until the first packet fills.
    pub fn open_send_channel<T: Element>(
        &self,
        count: usize,
        dst: usize,
        port: u8,
        comm: &Communicator,
    ) -> Result<SendChannel<'_, T>> {
        self.check_port::<T>(port, PortKind::P2p)?;
        let dst = self.peer(comm, dst)?;
        let (protocol, budget) = self.budget::<T>(port, count);
        if count > 0 {
            self.claim(port, Claim::Send)?;
        }
        Ok(SendChannel {
            ctx: self,
            port,
            dst,
            count,
            progress: 0,
            buf: Vec::with_capacity(T::DTYPE.max_elems_per_packet()),
            protocol,
            budget,
            credits: 0,
            sent: 0,
        })
    }

    /// Opens a receive channel of `count` elements from communicator rank `src`.
    pub fn open_recv_channel<T: Element>(
        &self,
        count: usize,
        src: usize,
        port: u8,
        comm: &Communicator,
    ) -> Result<RecvChannel<'_, T>> {
        self.check_port::<T>(port, PortKind::P2p)?;
        let src = self.peer(comm, src)?;
        let (protocol, budget) = self.budget::<T>(port, count);
        if count > 0 {
            self.claim(port, Claim::Recv)?;
        }
        Ok(RecvChannel {
            inbound: Inbound::new(src, port, count),
            ctx: self,
            protocol,
            budget,
            owed: 0,
        })
    }
}

/// Sending side of a transient channel.
pub struct SendChannel<'c, T: Element> {
    ctx: &'c RankContext<'c>,
    port: u8,
    dst: u8,
    count: usize,
    progress: usize,
    buf: Vec<T>,
    protocol: Protocol,
    budget: usize,
    credits: usize,
    sent: usize,
}

impl<T: Element> SendChannel<'_, T> {
    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    /// Packets the sender may have unacknowledged under the credit protocol.
    pub fn credit_budget(&self) -> usize {
        self.budget
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn progress(&self) -> usize {
        self.progress
    }

    pub fn is_closed(&self) -> bool {
        self.progress == self.count
    }

    /// Appends one element; returns once any packet it completes is on the
    /// CK_S link.
    pub fn push(&mut self, v: T) -> Result<()> {
        if self.is_closed() {
            return Err(SmiError::ContractViolation(format!(
                "push on closed channel (port {}, count {})",
                self.port, self.count
            )));
        }
        self.buf.push(v);
        self.progress += 1;
        self.ctx.count_pushed(self.port, 1);
        let flush = self.buf.len() == T::DTYPE.max_elems_per_packet() || self.is_closed();
        if !flush {
            return self.ctx.block_on("push", || Ok(Some(())));
        }
        let ctx = self.ctx;
        let total = self.count.div_ceil(T::DTYPE.max_elems_per_packet());
        let pkt = pack_elements(&self.buf, ctx.header(self.dst, self.port, OpType::Data))?;
        ctx.block_on("push", || {
            if self.protocol == Protocol::Credit && self.sent >= self.budget + self.credits {
                match ctx.shared().take(ctx.rank(), self.port, OpType::Credit, self.dst)? {
                    Some(_) => {
                        self.credits += 1;
                        if self.credits > total.saturating_sub(self.budget) {
                            return Err(SmiError::ProtocolViolation(format!(
                                "port {}: more credits than packets",
                                self.port
                            )));
                        }
                    }
                    None => return Ok(None),
                }
            }
            Ok(ctx.shared().try_emit(ctx.rank(), self.port, pkt)?.then_some(()))
        })?;
        self.sent += 1;
        self.buf.clear();
        if self.is_closed() {
            ctx.release(self.port, Claim::Send);
        }
        Ok(())
    }
}

/// Unpacks the DATA stream of one sender, checking each packet's element
/// count against the receiver's own view of the message.
pub(crate) struct Inbound<T> {
    pub src: u8,
    pub port: u8,
    pub count: usize,
    pub progress: usize,
    pub packets: usize,
    cur: VecDeque<T>,
    _t: PhantomData<T>,
}

impl<T: Element> Inbound<T> {
    pub fn new(src: u8, port: u8, count: usize) -> Self {
        Inbound {
            src,
            port,
            count,
            progress: 0,
            packets: 0,
            cur: VecDeque::new(),
            _t: PhantomData,
        }
    }

    pub fn buffered(&self) -> usize {
        self.cur.len()
    }

    /// Loads the next packet if the current one is used up. Returns whether
    /// an element is available.
    pub fn fill(&mut self, shared: &Shared<'_>, rank: u8) -> Result<bool> {
        if !self.cur.is_empty() {
            return Ok(true);
        }
        let Some(pkt) = shared.take(rank, self.port, OpType::Data, self.src)? else {
            return Ok(false);
        };
        let max = T::DTYPE.max_elems_per_packet();
        let received = self.progress;
        let expected = max.min(self.count.saturating_sub(received));
        let got = pkt.header.valid_count() as usize;
        if got != expected {
            return Err(SmiError::ChannelMismatch(format!(
                "port {} from rank {}: packet carries {got} elements, receiver expects {expected}",
                self.port, self.src
            )));
        }
        self.cur.extend(unpack_elements::<T>(&pkt)?);
        self.packets += 1;
        Ok(true)
    }

    /// Like [`Inbound::fill`] but accepts short packets, as long as the total
    /// stays within `count`.
    pub fn fill_any(&mut self, shared: &Shared<'_>, rank: u8) -> Result<bool> {
        let Some(pkt) = shared.take(rank, self.port, OpType::Data, self.src)? else {
            return Ok(false);
        };
        let got = pkt.header.valid_count() as usize;
        if self.progress + self.cur.len() + got > self.count {
            return Err(SmiError::ChannelMismatch(format!(
                "port {} from rank {}: more elements than the {} expected",
                self.port, self.src, self.count
            )));
        }
        self.cur.extend(unpack_elements::<T>(&pkt)?);
        self.packets += 1;
        Ok(true)
    }

    /// Takes the next element and reports whether it finished a packet.
    pub fn next(&mut self) -> (T, bool) {
        let v = self.cur.pop_front().expect("filled");
        self.progress += 1;
        (v, self.cur.is_empty())
    }
}

/// Receiving side of a transient channel.
pub struct RecvChannel<'c, T: Element> {
    ctx: &'c RankContext<'c>,
    inbound: Inbound<T>,
    protocol: Protocol,
    budget: usize,
    owed: usize,
}

impl<T: Element> RecvChannel<'_, T> {
    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn count(&self) -> usize {
        self.inbound.count
    }

    pub fn progress(&self) -> usize {
        self.inbound.progress
    }

    pub fn is_closed(&self) -> bool {
        self.inbound.progress == self.inbound.count
    }

    fn send_owed(&mut self) -> Result<()> {
        let ctx = self.ctx;
        while self.owed > 0 {
            let credit = NetworkPacket::control(ctx.header(self.inbound.src, self.inbound.port, OpType::Credit));
            if !ctx.shared().try_emit(ctx.rank(), self.inbound.port, credit)? {
                break;
            }
            self.owed -= 1;
        }
        Ok(())
    }

    /// Returns the next element in send order, blocking until it arrives.
    pub fn pop(&mut self) -> Result<T> {
        if self.is_closed() {
            return Err(SmiError::ContractViolation(format!(
                "pop on closed channel (port {}, count {})",
                self.inbound.port, self.inbound.count
            )));
        }
        let ctx = self.ctx;
        let max = T::DTYPE.max_elems_per_packet();
        let total = self.inbound.count.div_ceil(max);
        let v = ctx.block_on("pop", || {
            self.send_owed()?;
            let last = self.inbound.progress + 1 == self.inbound.count;
            if last && self.owed > 0 {
                return Ok(None);
            }
            if !self.inbound.fill(ctx.shared(), ctx.rank())? {
                return Ok(None);
            }
            let (v, packet_done) = self.inbound.next();
            if packet_done && self.protocol == Protocol::Credit && self.inbound.packets - 1 + self.budget < total {
                self.owed += 1;
                self.send_owed()?;
            }
            Ok(Some(v))
        })?;
        ctx.count_popped(self.inbound.port, 1);
        if self.is_closed() {
            ctx.release(self.inbound.port, Claim::Recv);
        }
        Ok(v)
    }
}
