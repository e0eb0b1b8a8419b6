use std::io::Write;

use super::link::{LinkId, Node};
use crate::packet::{OpType, PacketHeader};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceKind {
    /// An application endpoint handed a packet to its CK_S link.
    Emit,
    /// An application endpoint took a packet from its CK_R link.
    Consume,
    /// A CK unit accepted a packet from one of its inputs.
    Accept,
    /// A CK unit placed a packet on an output link.
    Forward,
}

impl TraceKind {
    fn name(self) -> &'static str {
        match self {
            TraceKind::Emit => "emit",
            TraceKind::Consume => "consume",
            TraceKind::Accept => "accept",
            TraceKind::Forward => "forward",
        }
    }
}

/// One event. In free-running mode `cycle` is 0 and the position in the trace
/// gives the order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub cycle: u64,
    pub at: Node,
    pub kind: TraceKind,
    pub link: LinkId,
    pub header: PacketHeader,
}

impl TraceEvent {
    pub fn is_data(&self) -> bool {
        self.header.op == OpType::Data
    }
}

fn op_name(op: OpType) -> &'static str {
    match op {
        OpType::Data => "data",
        OpType::SyncReady => "sync_ready",
        OpType::Credit => "credit",
    }
}

/// CSV columns: `cycle,unit,event,link,src,dst,port,op,count`.
pub fn write_trace_csv(events: &[TraceEvent], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "cycle,unit,event,link,src,dst,port,op,count")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.cycle,
            e.at,
            e.kind.name(),
            e.link,
            e.header.src,
            e.header.dst,
            e.header.port,
            op_name(e.header.op),
            e.header.valid_count()
        )?;
    }
    Ok(())
}
