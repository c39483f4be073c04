//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use dgrid::fsmpi::CommConfig;
use dgrid::mapdist::{DistSpec, Map, Order};
use dgrid::pitfalls::RedistSchedule;

/// Receive timeout used by multi-rank tests so a bug fails instead of hanging.
pub fn test_config() -> CommConfig {
    CommConfig {
        recv_timeout: Some(Duration::from_secs(60)),
        keep_msgs: false,
    }
}

pub const DISTS: [DistSpec; 5] = [
    DistSpec::Block,
    DistSpec::Cyclic,
    DistSpec::BlockCyclic(1),
    DistSpec::BlockCyclic(2),
    DistSpec::BlockCyclic(3),
];

/// Grid coordinate of `i` along one dimension, derived from the distribution definitions.
pub fn owner_coord(i: usize, dim: usize, dist: DistSpec, p: usize) -> usize {
    match dist {
        DistSpec::Block => {
            // Processors below dim % p take one extra element.
            let base = dim / p;
            let rem = dim % p;
            let big = rem * (base + 1);
            if i < big {
                i / (base + 1)
            } else {
                rem + (i - big) / base
            }
        }
        DistSpec::Cyclic => i % p,
        DistSpec::BlockCyclic(b) => (i / b) % p,
    }
}

/// Rank at a grid coordinate, by the row- or column-major linearization.
pub fn rank_at(grid: &[usize], order: Order, procs: &[usize], coord: &[usize]) -> usize {
    let mut lin = 0;
    match order {
        Order::RowMajor => {
            for d in 0..grid.len() {
                lin = lin * grid[d] + coord[d];
            }
        }
        Order::ColMajor => {
            for d in (0..grid.len()).rev() {
                lin = lin * grid[d] + coord[d];
            }
        }
    }
    procs[lin]
}

/// Whether processor coordinate `c` holds index `i` (owned or ghost) along one dimension.
pub fn holds(i: usize, dim: usize, dist: DistSpec, p: usize, ov: usize, c: usize) -> Option<bool> {
    if owner_coord(i, dim, dist, p) == c {
        return Some(true);
    }
    // Ghost: some owned index lies within `ov` below i.
    let ghost = (1..=ov).any(|k| i >= k && owner_coord(i - k, dim, dist, p) == c);
    ghost.then_some(false)
}

/// Every (sender, receiver, ghost, flat element) movement implied by element-wise ownership.
pub fn brute_force_moves(shape: &[usize], src: &Map, dst: &Map) -> BTreeMap<(usize, usize, bool, usize), usize> {
    let nd = shape.len();
    let total: usize = shape.iter().product();
    let mut out = BTreeMap::new();
    let mut idx = vec![0; nd];
    for flat in 0..total {
        let mut rest = flat;
        for d in (0..nd).rev() {
            idx[d] = rest % shape[d];
            rest /= shape[d];
        }
        let src_coord: Vec<usize> = (0..nd)
            .map(|d| owner_coord(idx[d], shape[d], src.dists()[d], src.grid()[d]))
            .collect();
        let sender = rank_at(src.grid(), src.order(), src.procs(), &src_coord);
        // Enumerate destination coordinates holding this element.
        let per_dim: Vec<Vec<(usize, bool)>> = (0..nd)
            .map(|d| {
                (0..dst.grid()[d])
                    .filter_map(|c| {
                        holds(idx[d], shape[d], dst.dists()[d], dst.grid()[d], dst.overlap()[d], c).map(|o| (c, o))
                    })
                    .collect()
            })
            .collect();
        let mut combos: Vec<(Vec<usize>, bool)> = vec![(Vec::new(), true)];
        for choices in &per_dim {
            combos = combos
                .into_iter()
                .flat_map(|(c, owned)| {
                    choices.iter().map(move |&(x, o)| {
                        let mut c = c.clone();
                        c.push(x);
                        (c, owned && o)
                    })
                })
                .collect();
        }
        for (coord, owned) in combos {
            let receiver = rank_at(dst.grid(), dst.order(), dst.procs(), &coord);
            *out.entry((sender, receiver, !owned, flat)).or_insert(0) += 1;
        }
    }
    out
}

/// The same movements read off a computed schedule.
pub fn schedule_moves(sched: &RedistSchedule) -> BTreeMap<(usize, usize, bool, usize), usize> {
    let shape = &sched.shape;
    let mut out = BTreeMap::new();
    for t in &sched.transfers {
        let per_dim: Vec<Vec<usize>> = t
            .block
            .iter()
            .map(|ivs| ivs.iter().flat_map(|iv| iv.lo..iv.hi).collect())
            .collect();
        let mut flats = vec![0usize];
        for (d, idx) in per_dim.iter().enumerate() {
            flats = flats
                .into_iter()
                .flat_map(|f| idx.iter().map(move |&i| f * shape[d] + i))
                .collect();
        }
        for f in flats {
            *out.entry((t.sender, t.receiver, t.ghost, f)).or_insert(0) += 1;
        }
    }
    out
}

/// All maps of one dimensionality whose grids fit in `max_procs`, for both orders.
/// Processor lists are reversed on odd grid sizes to exercise non-identity lists.
pub fn enumerate_maps(ndims: usize, max_procs: usize, dists: &[DistSpec]) -> Vec<Map> {
    let mut grids: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..ndims {
        grids = grids
            .into_iter()
            .flat_map(|g| {
                (1..=max_procs).filter_map(move |k| {
                    let mut g = g.clone();
                    g.push(k);
                    (g.iter().product::<usize>() <= max_procs).then_some(g)
                })
            })
            .collect();
    }
    let mut maps = Vec::new();
    for grid in grids {
        let n: usize = grid.iter().product();
        let procs: Vec<usize> = if n % 2 == 1 { (0..n).rev().collect() } else { (0..n).collect() };
        let mut dist_sets: Vec<Vec<DistSpec>> = vec![Vec::new()];
        for _ in 0..ndims {
            dist_sets = dist_sets
                .into_iter()
                .flat_map(|s| {
                    dists.iter().map(move |&d| {
                        let mut s = s.clone();
                        s.push(d);
                        s
                    })
                })
                .collect();
        }
        for ds in dist_sets {
            for order in [Order::RowMajor, Order::ColMajor] {
                maps.push(Map::new(&grid, &ds, &procs).unwrap().with_order(order));
            }
        }
    }
    maps
}

/// Names of the entries directly inside `dir`.
pub fn dir_entries(dir: &Path) -> Vec<String> {
    match std::fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    }
}
