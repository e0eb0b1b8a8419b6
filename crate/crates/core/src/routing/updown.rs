use std::collections::VecDeque;

use crate::topology::{Endpoint, TopologySpec};

/// Up*/down* orientation over a breadth-first spanning tree rooted at rank 0.
///
/// A link u-v points "up" from u when `key(v) < key(u)` with `key = (level, rank)`.
/// Legal routes take zero or more up links followed by zero or more down links.
#[derive(Clone, Debug)]
pub struct UpDown<'a> {
    topo: &'a TopologySpec,
    level: Vec<usize>,
}

impl<'a> UpDown<'a> {
    /// Requires a connected topology.
    pub fn new(topo: &'a TopologySpec) -> Self {
        let n = topo.num_ranks();
        let mut level = vec![usize::MAX; n];
        level[0] = 0;
        let mut queue = VecDeque::from([0u8]);
        while let Some(u) = queue.pop_front() {
            for (_, p) in topo.links_of(u) {
                if level[p.rank as usize] == usize::MAX {
                    level[p.rank as usize] = level[u as usize] + 1;
                    queue.push_back(p.rank);
                }
            }
        }
        UpDown { topo, level }
    }

    pub fn key(&self, r: u8) -> (usize, u8) {
        (self.level[r as usize], r)
    }

    pub fn is_up(&self, from: u8, to: u8) -> bool {
        self.key(to) < self.key(from)
    }

    /// `next[u][d]` = outgoing iface at `u` toward `d` (None when u == d).
    ///
    /// Ranks with a down-only path to `d` always descend along a shortest such
    /// path; the rest climb to the neighbour minimising the remaining cost. Since
    /// a descending rank only ever hands packets to descending ranks, the
    /// destination-indexed tables never produce a down->up turn.
    pub fn next_hops(&self) -> Vec<Vec<Option<u8>>> {
        let n = self.topo.num_ranks();
        let mut order: Vec<u8> = (0..n as u8).collect();
        order.sort_by_key(|&r| self.key(r));

        let mut next = vec![vec![None; n]; n];
        for d in 0..n as u8 {
            // Down-only distances to d: reverse search over links that point down into d's direction.
            let mut down = vec![usize::MAX; n];
            down[d as usize] = 0;
            let mut queue = VecDeque::from([d]);
            while let Some(v) = queue.pop_front() {
                for (_, p) in self.topo.links_of(v) {
                    let u = p.rank;
                    if self.is_up(v, u) && down[u as usize] == usize::MAX {
                        down[u as usize] = down[v as usize] + 1;
                        queue.push_back(u);
                    }
                }
            }
            let mut cost = down.clone();
            for &u in &order {
                if u == d {
                    continue;
                }
                let ifaces: Vec<(u8, Endpoint)> = self.topo.links_of(u).collect();
                if down[u as usize] != usize::MAX {
                    let target = down[u as usize] - 1;
                    next[u as usize][d as usize] = ifaces
                        .iter()
                        .find(|(_, p)| !self.is_up(u, p.rank) && down[p.rank as usize] == target)
                        .map(|(i, _)| *i);
                } else {
                    let best = ifaces
                        .iter()
                        .filter(|(_, p)| self.is_up(u, p.rank))
                        .map(|(i, p)| (cost[p.rank as usize], *i))
                        .min();
                    if let Some((c, i)) = best {
                        cost[u as usize] = c + 1;
                        next[u as usize][d as usize] = Some(i);
                    }
                }
            }
        }
        next
    }
}
