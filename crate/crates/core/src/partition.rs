//! Load balancing across the `p` result banks.
//!
//! Aggregation kernels: destination vertices are grouped by degree (0..=4 on
//! a grid) and each group is dealt round-robin over the banks, so every bank
//! sees the same number of vertices of each degree up to one.
//!
//! Update kernels: weight-matrix destination columns are scheduled with
//! longest-processing-time-first, the item size being the column's nonzero
//! count. An exhaustive branch-and-bound oracle gives the true optimum on
//! small instances.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::graph::GridGraph;
use crate::model::{Layer, ModelSpec};
use crate::real::Real;
use crate::weights::SparseWeightMatrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankAssignment {
    pub num_banks: usize,
    /// Owning bank of each destination.
    pub owner: Vec<u32>,
    /// Work items (incident edges or nonzeros) per bank.
    pub loads: Vec<usize>,
}

impl BankAssignment {
    /// Every destination on bank 0.
    pub fn single(num_dst: usize, load: usize) -> Self {
        Self {
            num_banks: 1,
            owner: vec![0; num_dst],
            loads: vec![load],
        }
    }

    pub fn num_dst(&self) -> usize {
        self.owner.len()
    }

    pub fn owner_of(&self, dst: usize) -> Result<usize> {
        self.owner
            .get(dst)
            .map(|&b| b as usize)
            .ok_or_else(|| Error::Partition(format!("destination {dst} has no owning bank")))
    }

    pub fn makespan(&self) -> usize {
        self.loads.iter().copied().max().unwrap_or(0)
    }

    pub fn imbalance(&self) -> usize {
        let min = self.loads.iter().copied().min().unwrap_or(0);
        self.makespan() - min
    }
}

/// Degree-class round-robin assignment of the graph's vertices. Class `i`
/// starts dealing at bank `i mod p`; vertices are dealt in grid-cell order.
pub fn partition_vak(graph: &GridGraph, p: usize) -> BankAssignment {
    assert!(p >= 1, "need at least one bank");
    let mut owner = vec![0u32; graph.num_vertices()];
    let mut loads = vec![0usize; p];
    let mut next = [0usize; 5];
    for (i, n) in next.iter_mut().enumerate() {
        *n = i % p;
    }
    for v in graph.vertices_in_cell_order() {
        let d = graph.degree(v);
        let bank = next[d];
        next[d] = (bank + 1) % p;
        owner[v] = bank as u32;
        loads[bank] += d;
    }
    BankAssignment {
        num_banks: p,
        owner,
        loads,
    }
}

/// Aggregation-kernel partitions for the input graph and every pooled level.
#[derive(Debug, Clone)]
pub struct LevelPartitions {
    /// `levels[0]` is the input graph; `levels[k]` follows the k-th pooling layer.
    pub levels: Vec<BankAssignment>,
    /// Vertex visits spent building all levels (coarsening plus dealing).
    pub vertex_visits: usize,
}

pub fn partition_levels<T: Real>(
    model: &ModelSpec<T>,
    graph: &GridGraph,
    p: usize,
) -> LevelPartitions {
    let mut levels = vec![partition_vak(graph, p)];
    let mut visits = graph.num_vertices();
    let mut g = graph.clone();
    for layer in &model.layers {
        if let Layer::Pool(pool) = layer {
            visits += g.num_vertices();
            g = g.coarsen(pool.size, pool.stride).graph;
            visits += g.num_vertices();
            levels.push(partition_vak(&g, p));
        }
    }
    LevelPartitions {
        levels,
        vertex_visits: visits,
    }
}

/// LPT schedule of `items` onto `p` banks: largest first (lower index first on
/// equal sizes), each onto the least-loaded bank (lowest id on ties).
pub fn lpt(items: &[usize], p: usize) -> BankAssignment {
    assert!(p >= 1, "need at least one bank");
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| Reverse(items[i]));
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> = (0..p).map(|b| Reverse((0, b))).collect();
    let mut owner = vec![0u32; items.len()];
    let mut loads = vec![0usize; p];
    for i in order {
        let Reverse((load, bank)) = heap.pop().expect("p >= 1");
        owner[i] = bank as u32;
        loads[bank] = load + items[i];
        heap.push(Reverse((loads[bank], bank)));
    }
    BankAssignment {
        num_banks: p,
        owner,
        loads,
    }
}

/// LPT over destination columns; item size is the column's nonzero count.
pub fn partition_vuk<T: Real>(weights: &SparseWeightMatrix<T>, p: usize) -> BankAssignment {
    lpt(&weights.dst_counts(), p)
}

pub const ORACLE_MAX_ITEMS: usize = 12;
pub const ORACLE_MAX_BANKS: usize = 4;

/// Minimum makespan over every assignment of `items` to `p` banks.
pub fn optimal_partition(items: &[usize], p: usize) -> Result<usize> {
    if items.len() > ORACLE_MAX_ITEMS || p > ORACLE_MAX_BANKS || p == 0 {
        return Err(Error::OracleSize {
            items: items.len(),
            banks: p,
        });
    }
    let mut sorted = items.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let total: usize = sorted.iter().sum();
    let lower = sorted.first().copied().unwrap_or(0).max(total.div_ceil(p));
    let mut best = lpt(&sorted, p).makespan();
    let mut loads = vec![0usize; p];
    search(&sorted, 0, &mut loads, &mut best, lower);
    Ok(best)
}

fn search(items: &[usize], k: usize, loads: &mut [usize], best: &mut usize, lower: usize) {
    if *best == lower {
        return;
    }
    if k == items.len() {
        *best = (*best).min(loads.iter().copied().max().unwrap_or(0));
        return;
    }
    for b in 0..loads.len() {
        // banks with equal load are interchangeable
        if loads[..b].contains(&loads[b]) {
            continue;
        }
        if loads[b] + items[k] >= *best {
            continue;
        }
        loads[b] += items[k];
        search(items, k + 1, loads, best, lower);
        loads[b] -= items[k];
    }
}
