//! Bcast, Scatter, Gather and Reduce over the linear scheme.
//!
//! Rendezvous packets (SYNC_READY, CREDIT) carry a fingerprint of the
//! collective's parameters in their payload, so ranks that opened the
//! collective differently are caught when the first control packet lands.

use crate::channel::{Communicator, Inbound, RankContext};
use crate::config::PortKind;
use crate::error::{Result, SmiError};
use crate::packet::{pack_elements, DataType, Element, NetworkPacket, OpType, PAYLOAD_BYTES};
use crate::transport::Claim;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReduceOp {
    Add,
    Max,
    Min,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 3] = [ReduceOp::Add, ReduceOp::Max, ReduceOp::Min];

    fn code(self) -> u8 {
        match self {
            ReduceOp::Add => 1,
            ReduceOp::Max => 2,
            ReduceOp::Min => 3,
        }
    }
}

/// Element types that can be reduced. Integer addition wraps.
pub trait Reducible: Element {
    fn combine(op: ReduceOp, a: Self, b: Self) -> Self;
    fn identity(op: ReduceOp) -> Self;
}

macro_rules! impl_int {
    ($($t:ty),*) => {$(
        impl Reducible for $t {
            fn combine(op: ReduceOp, a: Self, b: Self) -> Self {
                match op {
                    ReduceOp::Add => a.wrapping_add(b),
                    ReduceOp::Max => a.max(b),
                    ReduceOp::Min => a.min(b),
                }
            }
            fn identity(op: ReduceOp) -> Self {
                match op {
                    ReduceOp::Add => 0,
                    ReduceOp::Max => <$t>::MIN,
                    ReduceOp::Min => <$t>::MAX,
                }
            }
        }
    )*};
}

macro_rules! impl_float {
    ($($t:ty),*) => {$(
        impl Reducible for $t {
            fn combine(op: ReduceOp, a: Self, b: Self) -> Self {
                match op {
                    ReduceOp::Add => a + b,
                    ReduceOp::Max => if b > a { b } else { a },
                    ReduceOp::Min => if b < a { b } else { a },
                }
            }
            fn identity(op: ReduceOp) -> Self {
                match op {
                    ReduceOp::Add => 0.0,
                    ReduceOp::Max => <$t>::NEG_INFINITY,
                    ReduceOp::Min => <$t>::INFINITY,
                }
            }
        }
    )*};
}

impl_int!(i8, i16, i32);
impl_float!(f32, f64);

/// Folds `values` left to right, the order the root uses.
pub fn fold<T: Reducible>(op: ReduceOp, values: impl IntoIterator<Item = T>) -> Option<T> {
    values.into_iter().reduce(|a, b| T::combine(op, a, b))
}

fn kind_code(k: PortKind) -> u8 {
    match k {
        PortKind::P2p => 0,
        PortKind::Bcast => 1,
        PortKind::Reduce => 2,
        PortKind::Scatter => 3,
        PortKind::Gather => 4,
    }
}

fn dtype_code(t: DataType) -> u8 {
    DataType::ALL.iter().position(|&d| d == t).unwrap() as u8
}

/// State common to every collective channel.
struct Coll<'c> {
    ctx: &'c RankContext<'c>,
    kind: PortKind,
    port: u8,
    comm: Communicator,
    root: usize,
    me: usize,
    count: usize,
    fp: [u8; PAYLOAD_BYTES],
}

impl<'c> Coll<'c> {
    fn open<T: Element>(
        ctx: &'c RankContext<'c>,
        kind: PortKind,
        count: usize,
        port: u8,
        root: usize,
        comm: &Communicator,
        op: Option<ReduceOp>,
    ) -> Result<Self> {
        ctx.check_port::<T>(port, kind)?;
        let me = ctx.comm_rank(comm)?;
        if root >= comm.size() {
            return Err(SmiError::RankOutOfRange {
                rank: root,
                size: comm.size(),
            });
        }
        ctx.claim(port, Claim::Collective)?;
        let mut fp = [0u8; PAYLOAD_BYTES];
        fp[0] = kind_code(kind);
        fp[1] = dtype_code(T::DTYPE);
        fp[2] = op.map_or(0, ReduceOp::code);
        fp[3..7].copy_from_slice(&(root as u32).to_le_bytes());
        fp[7..11].copy_from_slice(&(count as u32).to_le_bytes());
        fp[11..15].copy_from_slice(&(comm.size() as u32).to_le_bytes());
        Ok(Coll {
            ctx,
            kind,
            port,
            comm: comm.clone(),
            root,
            me,
            count,
            fp,
        })
    }

    fn is_root(&self) -> bool {
        self.me == self.root
    }

    fn world(&self, r: usize) -> u8 {
        self.comm.ranks()[r]
    }

    fn others(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.comm.size()).filter(move |&r| r != self.me)
    }

    fn send_ctrl(&self, to: usize, op: OpType) -> Result<()> {
        let mut pkt = NetworkPacket::control(self.ctx.header(self.world(to), self.port, op));
        pkt.payload = self.fp;
        self.ctx.emit(self.what(), self.port, pkt)
    }

    fn recv_ctrl(&self, from: usize, op: OpType) -> Result<()> {
        let pkt = self.ctx.take(self.what(), self.port, op, self.world(from))?;
        if pkt.payload != self.fp {
            return Err(SmiError::ChannelMismatch(format!(
                "{:?} on port {}: rank {} opened it with different parameters",
                self.kind,
                self.port,
                self.world(from)
            )));
        }
        Ok(())
    }

    fn what(&self) -> &'static str {
        match self.kind {
            PortKind::Bcast => "bcast",
            PortKind::Scatter => "scatter",
            PortKind::Gather => "gather",
            PortKind::Reduce => "reduce",
            PortKind::P2p => "p2p",
        }
    }

    /// Streams `data` to `to`, one element per turn.
    fn send_block<T: Element>(&self, to: usize, data: &[T]) -> Result<()> {
        let header = self.ctx.header(self.world(to), self.port, OpType::Data);
        for chunk in data.chunks(T::DTYPE.max_elems_per_packet()) {
            for _ in 1..chunk.len() {
                self.ctx.block_on(self.what(), || Ok(Some(())))?;
            }
            self.ctx.emit(self.what(), self.port, pack_elements(chunk, header)?)?;
        }
        self.ctx.count_pushed(self.port, data.len() as u64);
        Ok(())
    }

    /// Receives `out.len()` elements from `from`, one element per turn.
    fn recv_block<T: Element>(&self, from: usize, out: &mut [T]) -> Result<()> {
        let mut inbound = Inbound::<T>::new(self.world(from), self.port, out.len());
        let shared = self.ctx.shared();
        for slot in out.iter_mut() {
            *slot = self.ctx.block_on(self.what(), || {
                Ok(inbound.fill(shared, self.ctx.rank())?.then(|| inbound.next().0))
            })?;
        }
        self.ctx.count_popped(self.port, out.len() as u64);
        Ok(())
    }

    fn close(&self) {
        self.ctx.release(self.port, Claim::Collective);
    }
}

/// Root pushes, everyone else pops, one element per call.
pub struct BcastChannel<'c, T: Element> {
    c: Coll<'c>,
    progress: usize,
    buf: Vec<T>,
    synced: bool,
    inbound: Option<Inbound<T>>,
}

pub struct ScatterChannel<'c, T: Element> {
    c: Coll<'c>,
    done: bool,
    _t: std::marker::PhantomData<T>,
}

pub struct GatherChannel<'c, T: Element> {
    c: Coll<'c>,
    done: bool,
    _t: std::marker::PhantomData<T>,
}

pub struct ReduceChannel<'c, T: Reducible> {
    c: Coll<'c>,
    op: ReduceOp,
    tile: usize,
    progress: usize,
    synced: bool,
    buf: Vec<T>,
    inbound: Vec<Option<Inbound<T>>>,
}

impl<'s> RankContext<'s> {
    /// Opens a broadcast of `count` elements from communicator rank `root`.
    /// Non-roots announce readiness to the root here.
    pub fn open_bcast_channel<T: Element>(
        &self,
        count: usize,
        port: u8,
        root: usize,
        comm: &Communicator,
    ) -> Result<BcastChannel<'_, T>> {
        let c = Coll::open::<T>(self, PortKind::Bcast, count, port, root, comm, None)?;
        let mut ch = BcastChannel {
            inbound: (!c.is_root()).then(|| Inbound::new(c.world(root), port, count)),
            c,
            progress: 0,
            buf: Vec::new(),
            synced: false,
        };
        if !ch.c.is_root() {
            ch.c.send_ctrl(root, OpType::SyncReady)?;
        } else if count == 0 {
            ch.sync()?;
        }
        if count == 0 {
            ch.c.close();
        }
        Ok(ch)
    }

    pub fn open_scatter_channel<T: Element>(
        &self,
        count: usize,
        port: u8,
        root: usize,
        comm: &Communicator,
    ) -> Result<ScatterChannel<'_, T>> {
        let c = Coll::open::<T>(self, PortKind::Scatter, count, port, root, comm, None)?;
        if !c.is_root() {
            c.send_ctrl(root, OpType::SyncReady)?;
        }
        Ok(ScatterChannel {
            c,
            done: false,
            _t: std::marker::PhantomData,
        })
    }

    pub fn open_gather_channel<T: Element>(
        &self,
        count: usize,
        port: u8,
        root: usize,
        comm: &Communicator,
    ) -> Result<GatherChannel<'_, T>> {
        let c = Coll::open::<T>(self, PortKind::Gather, count, port, root, comm, None)?;
        if !c.is_root() {
            c.send_ctrl(root, OpType::SyncReady)?;
        }
        Ok(GatherChannel {
            c,
            done: false,
            _t: std::marker::PhantomData,
        })
    }

    /// Opens a reduction of `count` elements per rank. The root accepts one
    /// tile of `reduce_credits` elements from every rank before granting the next.
    pub fn open_reduce_channel<T: Reducible>(
        &self,
        count: usize,
        op: ReduceOp,
        port: u8,
        root: usize,
        comm: &Communicator,
    ) -> Result<ReduceChannel<'_, T>> {
        let c = Coll::open::<T>(self, PortKind::Reduce, count, port, root, comm, Some(op))?;
        let inbound = (0..comm.size())
            .map(|r| (c.is_root() && r != c.me).then(|| Inbound::new(c.world(r), port, count)))
            .collect();
        let mut ch = ReduceChannel {
            c,
            op,
            tile: self.shared().config().reduce_credits,
            progress: 0,
            synced: false,
            buf: Vec::new(),
            inbound,
        };
        if !ch.c.is_root() {
            ch.c.send_ctrl(root, OpType::SyncReady)?;
        } else if count == 0 {
            ch.sync()?;
        }
        if count == 0 {
            ch.c.close();
        }
        Ok(ch)
    }
}

fn closed(kind: &str, port: u8) -> SmiError {
    SmiError::ContractViolation(format!("{kind} on closed channel (port {port})"))
}

impl<T: Element> BcastChannel<'_, T> {
    pub fn is_closed(&self) -> bool {
        self.progress == self.c.count
    }

    fn sync(&mut self) -> Result<()> {
        if !self.synced {
            for r in self.c.others().collect::<Vec<_>>() {
                self.c.recv_ctrl(r, OpType::SyncReady)?;
            }
            self.synced = true;
        }
        Ok(())
    }

    /// Root: sends `*data`. Others: overwrite `*data` with the next element.
    pub fn bcast(&mut self, data: &mut T) -> Result<()> {
        if self.is_closed() {
            return Err(closed("bcast", self.c.port));
        }
        let ctx = self.c.ctx;
        self.progress += 1;
        if let Some(inbound) = &mut self.inbound {
            *data = ctx.block_on("bcast", || {
                Ok(inbound.fill(ctx.shared(), ctx.rank())?.then(|| inbound.next().0))
            })?;
            ctx.count_popped(self.c.port, 1);
        } else {
            self.buf.push(*data);
            ctx.count_pushed(self.c.port, 1);
            if self.buf.len() == T::DTYPE.max_elems_per_packet() || self.is_closed() {
                self.sync()?;
                for r in self.c.others().collect::<Vec<_>>() {
                    let pkt = pack_elements(&self.buf, ctx.header(self.c.world(r), self.c.port, OpType::Data))?;
                    ctx.emit("bcast", self.c.port, pkt)?;
                }
                self.buf.clear();
            } else {
                ctx.block_on("bcast", || Ok(Some(())))?;
            }
        }
        if self.is_closed() {
            self.c.close();
        }
        Ok(())
    }
}

impl<T: Element> ScatterChannel<'_, T> {
    /// Root: `snd` holds `size * count` elements, block `i` goes to rank `i`.
    /// Every rank receives its block into `rcv`.
    pub fn scatter(&mut self, snd: &[T], rcv: &mut [T]) -> Result<()> {
        if self.done {
            return Err(closed("scatter", self.c.port));
        }
        let n = self.c.count;
        if rcv.len() != n {
            return Err(SmiError::ContractViolation(format!(
                "scatter receive buffer holds {}, expected {n}",
                rcv.len()
            )));
        }
        if self.c.is_root() {
            if snd.len() != n * self.c.comm.size() {
                return Err(SmiError::ContractViolation(format!(
                    "scatter send buffer holds {}, expected {}",
                    snd.len(),
                    n * self.c.comm.size()
                )));
            }
            for r in 0..self.c.comm.size() {
                let block = &snd[r * n..(r + 1) * n];
                if r == self.c.me {
                    rcv.copy_from_slice(block);
                } else {
                    self.c.recv_ctrl(r, OpType::SyncReady)?;
                    self.c.send_block(r, block)?;
                }
            }
        } else {
            self.c.recv_block(self.c.root, rcv)?;
        }
        self.done = true;
        self.c.close();
        Ok(())
    }
}

impl<T: Element> GatherChannel<'_, T> {
    /// Every rank contributes `snd` (`count` elements); the root's `rcv`
    /// receives all blocks in communicator-rank order.
    pub fn gather(&mut self, snd: &[T], rcv: &mut [T]) -> Result<()> {
        if self.done {
            return Err(closed("gather", self.c.port));
        }
        let n = self.c.count;
        if snd.len() != n {
            return Err(SmiError::ContractViolation(format!(
                "gather send buffer holds {}, expected {n}",
                snd.len()
            )));
        }
        if self.c.is_root() {
            if rcv.len() != n * self.c.comm.size() {
                return Err(SmiError::ContractViolation(format!(
                    "gather receive buffer holds {}, expected {}",
                    rcv.len(),
                    n * self.c.comm.size()
                )));
            }
            for r in 0..self.c.comm.size() {
                let block = &mut rcv[r * n..(r + 1) * n];
                if r == self.c.me {
                    block.copy_from_slice(snd);
                } else {
                    self.c.recv_ctrl(r, OpType::SyncReady)?;
                    self.c.send_ctrl(r, OpType::SyncReady)?;
                    self.c.recv_block(r, block)?;
                }
            }
        } else {
            self.c.recv_ctrl(self.c.root, OpType::SyncReady)?;
            self.c.send_block(self.c.root, snd)?;
        }
        self.done = true;
        self.c.close();
        Ok(())
    }
}

impl<T: Reducible> ReduceChannel<'_, T> {
    pub fn is_closed(&self) -> bool {
        self.progress == self.c.count
    }

    fn sync(&mut self) -> Result<()> {
        if !self.synced {
            for r in self.c.others().collect::<Vec<_>>() {
                self.c.recv_ctrl(r, OpType::SyncReady)?;
            }
            self.synced = true;
        }
        Ok(())
    }

    /// Contributes `snd`; on the root, `*rcv` receives the reduced element.
    pub fn reduce(&mut self, snd: T, rcv: &mut T) -> Result<()> {
        if self.is_closed() {
            return Err(closed("reduce", self.c.port));
        }
        let ctx = self.c.ctx;
        let port = self.c.port;
        let j = self.progress;
        let tile_start = j.is_multiple_of(self.tile);
        if self.c.is_root() {
            if tile_start {
                self.sync()?;
                for r in self.c.others().collect::<Vec<_>>() {
                    self.c.send_ctrl(r, OpType::Credit)?;
                }
            }
            let tile_end = (j / self.tile + 1) * self.tile;
            let (me, op) = (self.c.me, self.op);
            let inbound = &mut self.inbound;
            *rcv = ctx.block_on("reduce", || {
                let mut ready = true;
                for ib in inbound.iter_mut().flatten() {
                    if ib.buffered() == 0 {
                        ib.fill_any(ctx.shared(), ctx.rank())?;
                    }
                    if ib.progress + ib.buffered() > tile_end {
                        return Err(SmiError::ProtocolViolation(format!(
                            "reduce on port {port}: rank {} ran past the current tile",
                            ib.src
                        )));
                    }
                    ready &= ib.buffered() > 0;
                }
                if !ready {
                    return Ok(None);
                }
                let values =
                    inbound
                        .iter_mut()
                        .enumerate()
                        .map(|(r, ib)| if r == me { snd } else { ib.as_mut().unwrap().next().0 });
                Ok(fold(op, values))
            })?;
            ctx.count_popped(port, 1);
        } else {
            if tile_start {
                self.c.recv_ctrl(self.c.root, OpType::Credit)?;
            }
            self.buf.push(snd);
            ctx.count_pushed(port, 1);
            let flush = self.buf.len() == T::DTYPE.max_elems_per_packet()
                || (j + 1).is_multiple_of(self.tile)
                || j + 1 == self.c.count;
            if flush {
                let pkt = pack_elements(&self.buf, ctx.header(self.c.world(self.c.root), port, OpType::Data))?;
                ctx.emit("reduce", port, pkt)?;
                self.buf.clear();
            } else {
                ctx.block_on("reduce", || Ok(Some(())))?;
            }
        }
        self.progress += 1;
        if self.is_closed() {
            self.c.close();
        }
        Ok(())
    }
}
