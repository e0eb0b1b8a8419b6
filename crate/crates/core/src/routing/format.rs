//! Binary routing-table files, one per rank.
//!
//! ```text
//! 0..8    magic "SMIRT\0" + version (u16 LE)
//! 8       rank
//! 9       CK pairs per rank
//! 10..12  rank count (u16 LE)
//! then per pair:
//!   rank-count x (action, arg)  CK_S table, indexed by destination
//!   256 x (action, arg)         CK_R table, indexed by port
//! ```

use std::path::Path;

use super::{CkrAction, CkrTable, CksAction, CksTable, RankTables, RoutingTables, PORT_ENTRIES};
use crate::error::{Result, SmiError};

pub const TABLE_MAGIC: [u8; 6] = *b"SMIRT\0";
const VERSION: u16 = 1;
const PREAMBLE: usize = 12;

const NONE: u8 = 0xFF;

fn cks_code(a: CksAction) -> [u8; 2] {
    match a {
        CksAction::DeliverLocal => [0, 0],
        CksAction::ForwardLocalCks(j) => [1, j],
        CksAction::EmitIface => [2, 0],
        CksAction::Unroutable => [NONE, 0],
    }
}

fn cks_decode(b: &[u8]) -> Result<CksAction> {
    match b[0] {
        0 => Ok(CksAction::DeliverLocal),
        1 => Ok(CksAction::ForwardLocalCks(b[1])),
        2 => Ok(CksAction::EmitIface),
        NONE => Ok(CksAction::Unroutable),
        c => Err(SmiError::Tables(format!("unknown CK_S action code {c}"))),
    }
}

fn ckr_code(a: CkrAction) -> [u8; 2] {
    match a {
        CkrAction::ToApp => [0, 0],
        CkrAction::ForwardLocalCkr(j) => [1, j],
        CkrAction::Undeclared => [NONE, 0],
    }
}

fn ckr_decode(b: &[u8]) -> Result<CkrAction> {
    match b[0] {
        0 => Ok(CkrAction::ToApp),
        1 => Ok(CkrAction::ForwardLocalCkr(b[1])),
        NONE => Ok(CkrAction::Undeclared),
        c => Err(SmiError::Tables(format!("unknown CK_R action code {c}"))),
    }
}

pub fn table_file_name(rank: u8) -> String {
    format!("rank_{rank:03}.bin")
}

fn encode_rank(rt: &RoutingTables, t: &RankTables) -> Vec<u8> {
    let n = rt.num_ranks();
    let mut out = Vec::with_capacity(PREAMBLE + rt.pairs() as usize * 2 * (n + PORT_ENTRIES));
    out.extend_from_slice(&TABLE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(t.rank);
    out.push(rt.pairs());
    out.extend_from_slice(&(n as u16).to_le_bytes());
    for (cks, ckr) in t.cks.iter().zip(&t.ckr) {
        for a in &cks.0 {
            out.extend_from_slice(&cks_code(*a));
        }
        for a in &ckr.0 {
            out.extend_from_slice(&ckr_code(*a));
        }
    }
    out
}

fn decode_rank(bytes: &[u8]) -> Result<(usize, u8, RankTables)> {
    if bytes.len() < PREAMBLE || bytes[..6] != TABLE_MAGIC {
        return Err(SmiError::Tables("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(SmiError::Tables(format!("unsupported version {version}")));
    }
    let rank = bytes[8];
    let pairs = bytes[9];
    let n = u16::from_le_bytes([bytes[10], bytes[11]]) as usize;
    let per_pair = 2 * (n + PORT_ENTRIES);
    if bytes.len() != PREAMBLE + pairs as usize * per_pair {
        return Err(SmiError::Tables(format!(
            "rank {rank}: expected {} bytes, found {}",
            PREAMBLE + pairs as usize * per_pair,
            bytes.len()
        )));
    }
    let mut cks = Vec::new();
    let mut ckr = Vec::new();
    for chunk in bytes[PREAMBLE..].chunks_exact(per_pair) {
        let (s, r) = chunk.split_at(2 * n);
        cks.push(CksTable(s.chunks_exact(2).map(cks_decode).collect::<Result<_>>()?));
        ckr.push(CkrTable(r.chunks_exact(2).map(ckr_decode).collect::<Result<_>>()?));
    }
    Ok((n, pairs, RankTables { rank, cks, ckr }))
}

/// Serialises the tables: one (file name, bytes) entry per rank, in rank order.
pub fn emit_tables(rt: &RoutingTables) -> Vec<(String, Vec<u8>)> {
    rt.ranks()
        .iter()
        .map(|t| (table_file_name(t.rank), encode_rank(rt, t)))
        .collect()
}

/// Rebuilds tables from per-rank byte blobs (any order).
pub fn read_tables<'a>(blobs: impl IntoIterator<Item = &'a [u8]>) -> Result<RoutingTables> {
    let mut ranks = Vec::new();
    let mut shape = None;
    for b in blobs {
        let (n, pairs, t) = decode_rank(b)?;
        if *shape.get_or_insert((n, pairs)) != (n, pairs) {
            return Err(SmiError::Tables("table files disagree on shape".into()));
        }
        ranks.push(t);
    }
    let (n, pairs) = shape.ok_or_else(|| SmiError::Tables("no table files".into()))?;
    ranks.sort_by_key(|t| t.rank);
    RoutingTables::new(n, pairs, ranks)
}

pub fn write_tables(rt: &RoutingTables, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in emit_tables(rt) {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

pub fn load_tables(dir: &Path) -> Result<RoutingTables> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("rank_") && n.ends_with(".bin"))
        })
        .collect();
    files.sort();
    let blobs = files.iter().map(std::fs::read).collect::<std::io::Result<Vec<_>>>()?;
    read_tables(blobs.iter().map(Vec::as_slice))
}
