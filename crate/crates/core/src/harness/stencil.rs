use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};
use crate::transport::Fabric;

/// Ports of the halo exchange, named by the direction the data travels.
pub const PORT_WEST: u8 = 1;
pub const PORT_EAST: u8 = 2;
pub const PORT_NORTH: u8 = 3;
pub const PORT_SOUTH: u8 = 4;

/// Grid of `nx` rows by `ny` columns, split over `rx` by `ry` ranks; rank `r`
/// owns block (`r / ry`, `r % ry`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "one")]
    pub hx: usize,
    #[serde(default = "one")]
    pub hy: usize,
    pub t: usize,
    pub rx: usize,
    pub ry: usize,
    #[serde(default = "one_u64")]
    pub b_mem: u64,
    #[serde(default = "one_u64")]
    pub b_comm: u64,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

impl StencilConfig {
    pub fn new(nx: usize, ny: usize, t: usize, rx: usize, ry: usize) -> Self {
        StencilConfig {
            nx,
            ny,
            hx: 1,
            hy: 1,
            t,
            rx,
            ry,
            b_mem: 1,
            b_comm: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rx == 0 || self.ry == 0 || !self.nx.is_multiple_of(self.rx) || !self.ny.is_multiple_of(self.ry) {
            return Err(SmiError::Config(format!(
                "{}x{} grid does not split over {}x{} ranks",
                self.nx, self.ny, self.rx, self.ry
            )));
        }
        if self.hx != 1 || self.hy != 1 {
            return Err(SmiError::Config("the 4-point stencil needs halo width 1".into()));
        }
        Ok(())
    }

    pub fn ranks(&self) -> usize {
        self.rx * self.ry
    }
}

#[inline]
fn update(n: f32, s: f32, w: f32, e: f32) -> f32 {
    0.25 * (((n + s) + w) + e)
}

/// Sequential reference: `t` steps of the 4-point average with replicated edges.
pub fn stencil_reference(grid: &[f32], nx: usize, ny: usize, t: usize) -> Vec<f32> {
    let mut cur = grid.to_vec();
    let mut next = vec![0.0; nx * ny];
    for _ in 0..t {
        for x in 0..nx {
            for y in 0..ny {
                let at = |i: usize, j: usize| cur[i * ny + j];
                next[x * ny + y] = update(
                    at(x.saturating_sub(1), y),
                    at((x + 1).min(nx - 1), y),
                    at(x, y.saturating_sub(1)),
                    at(x, (y + 1).min(ny - 1)),
                );
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilRun {
    pub grid: Vec<f32>,
    pub cycles: u64,
}

/// Runs the decomposed stencil, one SPMD program per rank. Each step every
/// rank sends its edge rows and columns to the neighbours that exist, then
/// receives their halos. The fabric must have `rx * ry` ranks and serve the
/// four halo ports; the halo ports use the eager protocol.
pub fn app_stencil(fabric: &Fabric, cfg: &StencilConfig, grid: &[f32]) -> Result<StencilRun> {
    cfg.validate()?;
    if fabric.num_ranks() != cfg.ranks() {
        return Err(SmiError::Config(format!(
            "stencil needs {} ranks, fabric has {}",
            cfg.ranks(),
            fabric.num_ranks()
        )));
    }
    if grid.len() != cfg.nx * cfg.ny {
        return Err(SmiError::Config("initial grid has the wrong size".into()));
    }
    let (bx, by) = (cfg.nx / cfg.rx, cfg.ny / cfg.ry);
    let mut fabric = fabric.clone();
    for p in [PORT_WEST, PORT_EAST, PORT_NORTH, PORT_SOUTH] {
        fabric.config_mut().k.insert(p, bx.max(by));
    }
    let (ry, rx, ny, t) = (cfg.ry, cfg.rx, cfg.ny, cfg.t);
    let rep = fabric.run_spmd(|ctx| {
        let rank = ctx.rank() as usize;
        let (r_x, r_y) = (rank / ry, rank % ry);
        let w = ctx.world();
        // local block with a one-cell frame
        let (h, wd) = (bx + 2, by + 2);
        let mut cur = vec![0.0f32; h * wd];
        for i in 0..bx {
            for j in 0..by {
                cur[(i + 1) * wd + j + 1] = grid[(r_x * bx + i) * ny + r_y * by + j];
            }
        }
        let west = (r_y > 0).then(|| rank - 1);
        let east = (r_y + 1 < ry).then(|| rank + 1);
        let north = (r_x > 0).then(|| rank - ry);
        let south = (r_x + 1 < rx).then(|| rank + ry);
        let mut next = cur.clone();
        for _ in 0..t {
            let col = |c: &[f32], j: usize| (1..=bx).map(|i| c[i * wd + j]).collect::<Vec<_>>();
            let row = |c: &[f32], i: usize| c[i * wd + 1..i * wd + 1 + by].to_vec();
            let sends = [
                (west, PORT_WEST, col(&cur, 1)),
                (east, PORT_EAST, col(&cur, by)),
                (north, PORT_NORTH, row(&cur, 1)),
                (south, PORT_SOUTH, row(&cur, bx)),
            ];
            for (peer, port, data) in &sends {
                if let Some(p) = peer {
                    let mut ch = ctx.open_send_channel::<f32>(data.len(), *p, *port, &w)?;
                    for &v in data {
                        ch.push(v)?;
                    }
                }
            }
            // halo from the east neighbour arrives on the westward port, and so on
            let recvs = [
                (east, PORT_WEST, bx),
                (west, PORT_EAST, bx),
                (south, PORT_NORTH, by),
                (north, PORT_SOUTH, by),
            ];
            let mut halos: [Option<Vec<f32>>; 4] = Default::default();
            for (slot, (peer, port, len)) in halos.iter_mut().zip(recvs) {
                if let Some(p) = peer {
                    let mut ch = ctx.open_recv_channel::<f32>(len, p, port, &w)?;
                    *slot = Some((0..len).map(|_| ch.pop()).collect::<Result<_>>()?);
                }
            }
            let [from_east, from_west, from_south, from_north] = halos;
            for i in 1..=bx {
                cur[i * wd] = from_west.as_ref().map_or(cur[i * wd + 1], |v| v[i - 1]);
                cur[i * wd + by + 1] = from_east.as_ref().map_or(cur[i * wd + by], |v| v[i - 1]);
            }
            for j in 1..=by {
                cur[j] = from_north.as_ref().map_or(cur[wd + j], |v| v[j - 1]);
                cur[(bx + 1) * wd + j] = from_south.as_ref().map_or(cur[bx * wd + j], |v| v[j - 1]);
            }
            for i in 1..=bx {
                for j in 1..=by {
                    next[i * wd + j] = update(
                        cur[(i - 1) * wd + j],
                        cur[(i + 1) * wd + j],
                        cur[i * wd + j - 1],
                        cur[i * wd + j + 1],
                    );
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let mut block = Vec::with_capacity(bx * by);
        for i in 1..=bx {
            block.extend_from_slice(&cur[i * wd + 1..i * wd + 1 + by]);
        }
        Ok(block)
    })?;
    let mut out = vec![0.0; cfg.nx * cfg.ny];
    for (rank, block) in rep.outputs.iter().enumerate() {
        let (r_x, r_y) = (rank / ry, rank % ry);
        for i in 0..bx {
            let dst = (r_x * bx + i) * ny + r_y * by;
            out[dst..dst + by].copy_from_slice(&block[i * by..(i + 1) * by]);
        }
    }
    Ok(StencilRun {
        grid: out,
        cycles: rep.cycles,
    })
}

/// Both sides of the communication-hiding condition
/// `(nx - 2hx)(ny - 2hy) / b_mem >= 4(nx*hy + ny*hx) / b_comm`, kept as
/// numerator over bandwidth so the comparison is exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HidingCheck {
    pub compute: u128,
    pub b_mem: u64,
    pub communicate: u128,
    pub b_comm: u64,
    pub hidden: bool,
}

impl HidingCheck {
    pub fn lhs(&self) -> f64 {
        self.compute as f64 / self.b_mem as f64
    }

    pub fn rhs(&self) -> f64 {
        self.communicate as f64 / self.b_comm as f64
    }
}

pub fn stencil_hiding_check(cfg: &StencilConfig) -> Result<HidingCheck> {
    if cfg.b_mem == 0 || cfg.b_comm == 0 {
        return Err(SmiError::Config("bandwidths must be positive".into()));
    }
    let inner = |n: usize, h: usize| n.saturating_sub(2 * h) as u128;
    let compute = inner(cfg.nx, cfg.hx) * inner(cfg.ny, cfg.hy);
    let communicate = 4 * (cfg.nx as u128 * cfg.hy as u128 + cfg.ny as u128 * cfg.hx as u128);
    Ok(HidingCheck {
        compute,
        b_mem: cfg.b_mem,
        communicate,
        b_comm: cfg.b_comm,
        hidden: compute * cfg.b_comm as u128 >= communicate * cfg.b_mem as u128,
    })
}
