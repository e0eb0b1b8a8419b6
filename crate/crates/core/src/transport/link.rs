use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use crate::packet::NetworkPacket;

pub type LinkId = usize;

/// Something a link connects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    App { rank: u8, port: u8 },
    Cks { rank: u8, pair: u8 },
    Ckr { rank: u8, pair: u8 },
}

impl std::fmt::Display for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Node::App { rank, port } => write!(f, "r{rank}.app{port}"),
            Node::Cks { rank, pair } => write!(f, "r{rank}.cks{pair}"),
            Node::Ckr { rank, pair } => write!(f, "r{rank}.ckr{pair}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkDesc {
    pub from: Node,
    pub to: Node,
    pub wire: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub packets: u64,
    /// Sum of valid element counts over DATA packets.
    pub data_elements: u64,
    pub data_packets: u64,
    pub max_occupancy: usize,
}

/// Bounded FIFO. A packet pushed at cycle `c` becomes visible at `c + latency`.
#[derive(Debug)]
pub struct Link {
    capacity: usize,
    latency: u64,
    queue: VecDeque<(u64, NetworkPacket)>,
    pub stats: LinkStats,
}

impl Link {
    pub fn new(capacity: usize, latency: u64) -> Self {
        Link {
            capacity,
            latency,
            queue: VecDeque::with_capacity(capacity),
            stats: LinkStats::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.queue.len() >= self.capacity
    }

    /// Returns false (and leaves the link untouched) when full.
    pub fn push(&mut self, now: u64, pkt: NetworkPacket) -> bool {
        if self.is_full() {
            return false;
        }
        self.queue.push_back((now + self.latency, pkt));
        self.stats.packets += 1;
        if pkt.header.op == crate::packet::OpType::Data {
            self.stats.data_packets += 1;
            self.stats.data_elements += pkt.header.valid_count() as u64;
        }
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.queue.len());
        true
    }

    pub fn has_ready(&self, now: u64) -> bool {
        self.queue.front().is_some_and(|(t, _)| *t <= now)
    }

    pub fn peek_ready(&self, now: u64) -> Option<&NetworkPacket> {
        self.queue.front().filter(|(t, _)| *t <= now).map(|(_, p)| p)
    }

    pub fn pop_ready(&mut self, now: u64) -> Option<NetworkPacket> {
        if self.has_ready(now) {
            self.queue.pop_front().map(|(_, p)| p)
        } else {
            None
        }
    }
}

/// Generation counter used by the free-running mode to park idle threads.
#[derive(Debug, Default)]
pub struct Progress {
    generation: Mutex<u64>,
    changed: Condvar,
}

impl Progress {
    pub fn current(&self) -> u64 {
        *self.generation.lock().unwrap()
    }

    pub fn bump(&self) {
        *self.generation.lock().unwrap() += 1;
        self.changed.notify_all();
    }

    /// Waits until the generation moves past `seen` or the timeout expires.
    pub fn wait_change(&self, seen: u64, timeout: Duration) {
        let g = self.generation.lock().unwrap();
        if *g != seen {
            return;
        }
        let _unused = self.changed.wait_timeout_while(g, timeout, |g| *g == seen).unwrap();
    }
}
