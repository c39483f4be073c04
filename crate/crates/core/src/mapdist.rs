//! Declarative maps: processor grid, per-dimension distribution, overlap,
//! processor list and rank ordering.
//!
//! A map literal looks like `grid=2x2;dist=b,c;procs=0-3;overlap=0,1;order=row`.
//! Distributions are `b` (block), `c` (cyclic) and `bc<N>` (block-cyclic with
//! block size `N`). Omitted keys take their defaults: block everywhere,
//! processors `0..n`, zero overlap, row-major ordering.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::interval::{self, Interval};

pub const MAX_DIMS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DistSpec {
    Block,
    Cyclic,
    BlockCyclic(usize),
}

impl DistSpec {
    /// Segment length for cyclic-style distributions; `None` for block.
    pub fn cycle_block(&self) -> Option<usize> {
        match *self {
            DistSpec::Block => None,
            DistSpec::Cyclic => Some(1),
            DistSpec::BlockCyclic(b) => Some(b),
        }
    }
}

impl FromStr for DistSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "b" | "block" => Ok(DistSpec::Block),
            "c" | "cyclic" => Ok(DistSpec::Cyclic),
            other => {
                let n = other
                    .strip_prefix("bc")
                    .ok_or_else(|| format!("unknown distribution {other:?}"))?;
                if n.is_empty() {
                    return Err("block-cyclic distribution needs a block size, e.g. bc2".into());
                }
                n.parse()
                    .map(DistSpec::BlockCyclic)
                    .map_err(|_| format!("bad block size {n:?}"))
            }
        }
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Block => f.write_str("b"),
            DistSpec::Cyclic => f.write_str("c"),
            DistSpec::BlockCyclic(b) => write!(f, "bc{b}"),
        }
    }
}

/// How positions in the processor list fill the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Order {
    /// Last grid dimension varies fastest.
    #[default]
    RowMajor,
    /// First grid dimension varies fastest.
    ColMajor,
}

/// Distribution of an array over a processor grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Map {
    grid: Vec<usize>,
    dists: Vec<DistSpec>,
    overlap: Vec<usize>,
    procs: Vec<usize>,
    order: Order,
}

impl Map {
    /// Validates and builds a map with zero overlap and row-major order.
    ///
    /// An empty `dists` means block in every dimension; a single spec is
    /// applied to every dimension.
    pub fn new(grid: &[usize], dists: &[DistSpec], procs: &[usize]) -> Result<Self> {
        if grid.is_empty() || grid.len() > MAX_DIMS {
            return Err(Error::InvalidMap(format!(
                "grid must have 1 to {MAX_DIMS} dimensions, got {}",
                grid.len()
            )));
        }
        if grid.contains(&0) {
            return Err(Error::InvalidMap(format!("grid {grid:?} has a zero extent")));
        }
        let dists = match dists.len() {
            0 => vec![DistSpec::Block; grid.len()],
            1 => vec![dists[0]; grid.len()],
            n if n == grid.len() => dists.to_vec(),
            n => {
                return Err(Error::InvalidMap(format!(
                    "{n} distributions given for a {}-dimensional grid",
                    grid.len()
                )))
            }
        };
        if dists.contains(&DistSpec::BlockCyclic(0)) {
            return Err(Error::InvalidMap("block-cyclic block size must be at least 1".into()));
        }
        let needed: usize = grid.iter().product();
        if procs.len() != needed {
            return Err(Error::InvalidMap(format!(
                "grid {grid:?} needs {needed} processors, list has {}",
                procs.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = procs.iter().find(|r| !seen.insert(**r)) {
            return Err(Error::InvalidMap(format!("rank {dup} appears twice in the processor list")));
        }
        Ok(Map {
            overlap: vec![0; grid.len()],
            grid: grid.to_vec(),
            dists,
            procs: procs.to_vec(),
            order: Order::RowMajor,
        })
    }

    /// Block in every dimension over processors `0..product(grid)`.
    pub fn block(grid: &[usize]) -> Result<Self> {
        let n = grid.iter().product();
        Map::new(grid, &[], &(0..n).collect::<Vec<_>>())
    }

    pub fn with_overlap(mut self, overlap: &[usize]) -> Result<Self> {
        if overlap.len() != self.grid.len() {
            return Err(Error::InvalidMap(format!(
                "{} overlap values given for a {}-dimensional grid",
                overlap.len(),
                self.grid.len()
            )));
        }
        self.overlap = overlap.to_vec();
        Ok(self)
    }

    pub fn with_order(mut self, order: Order) -> Self {
        self.order = order;
        self
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn dists(&self) -> &[DistSpec] {
        &self.dists
    }

    pub fn overlap(&self) -> &[usize] {
        &self.overlap
    }

    pub fn procs(&self) -> &[usize] {
        &self.procs
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn ndims(&self) -> usize {
        self.grid.len()
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.procs.contains(&rank)
    }

    /// Lowest rank in the processor list.
    pub fn leader(&self) -> usize {
        *self.procs.iter().min().expect("processor list is never empty")
    }

    pub fn has_overlap(&self) -> bool {
        self.overlap.iter().any(|&o| o > 0)
    }

    /// Grid coordinate of `rank`.
    pub fn rank_to_coord(&self, rank: usize) -> Result<Vec<usize>> {
        let pos = self
            .procs
            .iter()
            .position(|&r| r == rank)
            .ok_or(Error::NotInMap(rank))?;
        Ok(self.position_to_coord(pos))
    }

    /// Rank at grid coordinate `coord`.
    pub fn coord_to_rank(&self, coord: &[usize]) -> Result<usize> {
        if coord.len() != self.grid.len() || coord.iter().zip(&self.grid).any(|(c, g)| c >= g) {
            return Err(Error::InvalidArgument(format!(
                "coordinate {coord:?} outside grid {:?}",
                self.grid
            )));
        }
        let mut pos = 0;
        match self.order {
            Order::RowMajor => {
                for (c, g) in coord.iter().zip(&self.grid) {
                    pos = pos * g + c;
                }
            }
            Order::ColMajor => {
                for (c, g) in coord.iter().zip(&self.grid).rev() {
                    pos = pos * g + c;
                }
            }
        }
        Ok(self.procs[pos])
    }

    fn position_to_coord(&self, mut pos: usize) -> Vec<usize> {
        let mut coord = vec![0; self.grid.len()];
        let dims: Vec<usize> = match self.order {
            Order::RowMajor => (0..self.grid.len()).rev().collect(),
            Order::ColMajor => (0..self.grid.len()).collect(),
        };
        for d in dims {
            coord[d] = pos % self.grid[d];
            pos /= self.grid[d];
        }
        coord
    }

    /// Per-dimension extents owned by `rank` for an array of `shape`, or `None` when
    /// the rank is outside the processor list.
    pub fn extents(&self, shape: &[usize], rank: usize) -> Result<Option<Vec<Extent>>> {
        self.check_shape(shape)?;
        let Ok(coord) = self.rank_to_coord(rank) else {
            return Ok(None);
        };
        Ok(Some(
            (0..self.ndims())
                .map(|d| local_extent(shape[d], self.dists[d], self.grid[d], coord[d], self.overlap[d]))
                .collect(),
        ))
    }

    pub fn check_shape(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.ndims() {
            return Err(Error::DimensionMismatch(format!(
                "array has {} dimensions, map grid has {}",
                shape.len(),
                self.ndims()
            )));
        }
        Ok(())
    }
}

/// Full-signature constructor: grid, distributions, processor list, optional overlap and order.
pub fn make_map(
    grid: &[usize],
    dists: &[DistSpec],
    procs: &[usize],
    overlap: Option<&[usize]>,
    order: Option<Order>,
) -> Result<Map> {
    let mut map = Map::new(grid, dists, procs)?;
    if let Some(ov) = overlap {
        map = map.with_overlap(ov)?;
    }
    Ok(map.with_order(order.unwrap_or_default()))
}

impl fmt::Display for Map {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>();
        write!(
            f,
            "grid={};dist={};procs={};overlap={};order={}",
            join(&self.grid).join("x"),
            self.dists.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            format_proc_list(&self.procs),
            join(&self.overlap).join(","),
            match self.order {
                Order::RowMajor => "row",
                Order::ColMajor => "col",
            }
        )
    }
}

impl FromStr for Map {
    type Err = Error;

    fn from_str(literal: &str) -> Result<Self> {
        let bad = |reason: String| Error::MapLiteral {
            literal: literal.to_string(),
            reason,
        };
        let mut grid = None;
        let mut dists = Vec::new();
        let mut procs = None;
        let mut overlap = None;
        let mut order = Order::RowMajor;
        for part in literal.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("{part:?} is not key=value")))?;
            let value = value.trim();
            match key.trim() {
                "grid" => {
                    grid = Some(
                        value
                            .split('x')
                            .map(|g| g.trim().parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad(format!("bad grid {value:?}")))?,
                    )
                }
                "dist" => {
                    dists = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(str::parse::<DistSpec>)
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(bad)?
                    }
                }
                "procs" => procs = Some(parse_proc_list(value).map_err(bad)?),
                "overlap" => {
                    overlap = Some(
                        value
                            .split(',')
                            .map(|o| o.trim().parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad(format!("bad overlap {value:?}")))?,
                    )
                }
                "order" => {
                    order = match value {
                        "row" => Order::RowMajor,
                        "col" => Order::ColMajor,
                        other => return Err(bad(format!("order must be row or col, got {other:?}"))),
                    }
                }
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let grid = grid.ok_or_else(|| bad("missing grid".into()))?;
        let procs = procs.unwrap_or_else(|| (0..grid.iter().product()).collect());
        make_map(&grid, &dists, &procs, overlap.as_deref(), Some(order))
    }
}

fn parse_proc_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim) {
        let num = |x: &str| x.trim().parse::<usize>().map_err(|_| format!("bad rank {x:?}"));
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a <= b {
                    out.extend(a..=b);
                } else {
                    out.extend((b..=a).rev());
                }
            }
            None => out.push(num(item)?),
        }
    }
    Ok(out)
}

fn format_proc_list(procs: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < procs.len() {
        let mut j = i;
        let step = procs
            .get(i + 1)
            .map(|&n| n as i64 - procs[i] as i64)
            .filter(|s| s.abs() == 1);
        if let Some(step) = step {
            while j + 1 < procs.len() && procs[j + 1] as i64 - procs[j] as i64 == step {
                j += 1;
            }
            parts.push(format!("{}-{}", procs[i], procs[j]));
        } else {
            parts.push(procs[i].to_string());
        }
        i = j + 1;
    }
    parts.join(",")
}

/// Ownership of one processor along one dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extent {
    /// Owned global intervals, sorted and disjoint.
    pub owned: Vec<Interval>,
    /// Replicated neighbor indices, sorted, disjoint from `owned`.
    pub ghost: Vec<Interval>,
}

impl Extent {
    pub fn owned_len(&self) -> usize {
        interval::count(&self.owned)
    }

    /// Owned and ghost indices together: the indices held in local storage, in global order.
    pub fn local(&self) -> Vec<Interval> {
        interval::normalize(self.owned.iter().chain(&self.ghost).copied().collect())
    }

    pub fn local_len(&self) -> usize {
        self.owned_len() + interval::count(&self.ghost)
    }
}

/// Owned count of every processor under a block distribution.
///
/// Every processor gets `dim / n` elements and the remainder goes one by one to
/// processors `0, 1, ...`, so no processor is left empty while another has two
/// or more elements more than it.
pub fn fair_share_sizes(dim_size: usize, nprocs: usize) -> Vec<usize> {
    let base = dim_size / nprocs;
    let rem = dim_size % nprocs;
    (0..nprocs).map(|q| base + usize::from(q < rem)).collect()
}

/// Start of processor `proc_idx`'s block under the fair-share rule.
pub fn fair_share_start(dim_size: usize, nprocs: usize, proc_idx: usize) -> usize {
    let base = dim_size / nprocs;
    let rem = dim_size % nprocs;
    if proc_idx < rem {
        proc_idx * (base + 1)
    } else {
        rem * (base + 1) + (proc_idx - rem) * base
    }
}

/// Global intervals owned (and ghosted) by processor `proc_idx` of `nprocs`.
pub fn local_extent(dim_size: usize, dist: DistSpec, nprocs: usize, proc_idx: usize, overlap: usize) -> Extent {
    assert!(proc_idx < nprocs, "processor index {proc_idx} out of range for {nprocs}");
    let owned = match dist.cycle_block() {
        None => {
            let lo = fair_share_start(dim_size, nprocs, proc_idx);
            let len = fair_share_sizes(dim_size, nprocs)[proc_idx];
            if len == 0 {
                Vec::new()
            } else {
                vec![Interval::new(lo, lo + len)]
            }
        }
        Some(b) => {
            let period = b * nprocs;
            let mut v = Vec::new();
            let mut lo = proc_idx * b;
            while lo < dim_size {
                v.push(Interval::new(lo, (lo + b).min(dim_size)));
                lo += period;
            }
            v
        }
    };
    let ghost = if overlap == 0 {
        Vec::new()
    } else {
        let reach = owned
            .iter()
            .map(|iv| Interval::new(iv.hi, (iv.hi + overlap).min(dim_size)))
            .collect();
        interval::subtract_lists(&interval::normalize(reach), &owned)
    };
    Extent { owned, ghost }
}

/// The "map" argument of array factories: a real map, or the scalar `1` / nothing
/// to get a plain local array.
#[derive(Clone, Debug, PartialEq)]
pub enum MapArg {
    Absent,
    Scalar(i64),
    Map(Map),
}

impl From<Map> for MapArg {
    fn from(m: Map) -> Self {
        MapArg::Map(m)
    }
}

impl From<&Map> for MapArg {
    fn from(m: &Map) -> Self {
        MapArg::Map(m.clone())
    }
}

/// True when `arg` switches distribution off. Only the scalar `1` is a legal scalar map.
pub fn is_serial_map(arg: &MapArg) -> Result<bool> {
    match arg {
        MapArg::Absent | MapArg::Scalar(1) => Ok(true),
        MapArg::Scalar(other) => Err(Error::InvalidMap(format!(
            "scalar map must be 1, got {other}"
        ))),
        MapArg::Map(_) => Ok(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sizes(dim: usize, dist: DistSpec, n: usize) -> Vec<usize> {
        (0..n).map(|q| local_extent(dim, dist, n, q, 0).owned_len()).collect()
    }

    fn iv(lo: usize, hi: usize) -> Interval {
        Interval::new(lo, hi)
    }

    #[test]
    fn make_map_defaults_to_block() {
        let m = make_map(&[1, 4], &[], &[0, 1, 2, 3], None, None).unwrap();
        assert_eq!(m.dists(), &[DistSpec::Block, DistSpec::Block]);
        assert_eq!(m.overlap(), &[0, 0]);
        assert_eq!(m.order(), Order::RowMajor);
    }

    #[test]
    fn single_spec_is_broadcast() {
        let m = Map::new(&[2, 2], &[DistSpec::Cyclic], &[0, 1, 2, 3]).unwrap();
        assert_eq!(m.dists(), &[DistSpec::Cyclic, DistSpec::Cyclic]);
    }

    #[test]
    fn construction_errors() {
        assert!(Map::new(&[2, 2], &[], &[0, 1, 2]).is_err());
        assert!(Map::new(&[2, 2], &[], &[0, 1, 2, 2]).is_err());
        assert!(Map::new(&[1, 1, 1, 1, 1], &[], &[0]).is_err());
        assert!(Map::new(&[2], &[DistSpec::BlockCyclic(0)], &[0, 1]).is_err());
        assert!(Map::new(&[2], &[DistSpec::Block, DistSpec::Block, DistSpec::Block], &[0, 1]).is_err());
        assert!("grid=2;dist=bc".parse::<Map>().is_err());
    }

    #[test]
    fn coordinates_follow_order() {
        let row = Map::block(&[2, 2]).unwrap();
        assert_eq!(row.rank_to_coord(1).unwrap(), vec![0, 1]);
        let col = row.clone().with_order(Order::ColMajor);
        assert_eq!(col.rank_to_coord(1).unwrap(), vec![1, 0]);
        assert!(matches!(row.rank_to_coord(9), Err(Error::NotInMap(9))));
        for m in [&row, &col] {
            for r in 0..4 {
                assert_eq!(m.coord_to_rank(&m.rank_to_coord(r).unwrap()).unwrap(), r);
            }
        }
    }

    #[test]
    fn fair_share_block() {
        assert_eq!(sizes(16, DistSpec::Block, 5), vec![4, 3, 3, 3, 3]);
        assert_eq!(sizes(32, DistSpec::Block, 4), vec![8, 8, 8, 8]);
        assert_eq!(local_extent(32, DistSpec::Block, 4, 1, 0).owned, vec![iv(8, 16)]);
    }

    #[test]
    fn cyclic_extent() {
        let owned: Vec<Vec<usize>> = (0..3)
            .map(|q| interval::indices(&local_extent(7, DistSpec::Cyclic, 3, q, 0).owned).collect())
            .collect();
        assert_eq!(owned, vec![vec![0, 3, 6], vec![1, 4], vec![2, 5]]);
        assert!(local_extent(2, DistSpec::Cyclic, 3, 2, 0).owned.is_empty());
    }

    /// Brute-force owner of index `i` under block-cyclic with block `b` over `n` processors.
    fn bc_owner(i: usize, b: usize, n: usize) -> usize {
        (i / b) % n
    }

    #[test]
    fn block_cyclic_with_overlap() {
        let e = local_extent(10, DistSpec::BlockCyclic(2), 2, 0, 1);
        let brute: Vec<usize> = (0..10).filter(|&i| bc_owner(i, 2, 2) == 0).collect();
        assert_eq!(interval::indices(&e.owned).collect::<Vec<_>>(), brute);
        assert_eq!(e.owned, vec![iv(0, 2), iv(4, 6), iv(8, 10)]);
        assert_eq!(e.ghost, vec![iv(2, 3), iv(6, 7)]);
        assert_eq!(e.local(), vec![iv(0, 3), iv(4, 7), iv(8, 10)]);
    }

    #[test]
    fn block_ghost_reaches_higher_neighbor() {
        let e = local_extent(12, DistSpec::Block, 3, 0, 2);
        assert_eq!(e.ghost, vec![iv(4, 6)]);
        assert!(local_extent(12, DistSpec::Block, 3, 2, 2).ghost.is_empty());
    }

    #[test]
    fn serial_map_argument() {
        assert!(is_serial_map(&MapArg::Scalar(1)).unwrap());
        assert!(is_serial_map(&MapArg::Absent).unwrap());
        assert!(!is_serial_map(&Map::block(&[1, 4]).unwrap().into()).unwrap());
        assert!(is_serial_map(&MapArg::Scalar(2)).is_err());
    }

    #[test]
    fn literal_round_trip() {
        let m: Map = "grid=2x2;dist=b,c;procs=0-3;overlap=0,1;order=row".parse().unwrap();
        assert_eq!(m.dists(), &[DistSpec::Block, DistSpec::Cyclic]);
        assert_eq!(m.overlap(), &[0, 1]);
        assert_eq!(m.to_string(), "grid=2x2;dist=b,c;procs=0-3;overlap=0,1;order=row");

        let m: Map = "grid=3;dist=bc3;procs=5,2-1;order=col".parse().unwrap();
        assert_eq!(m.procs(), &[5, 2, 1]);
        assert_eq!(m.to_string().parse::<Map>().unwrap(), m);
    }

    fn dist_strategy() -> impl Strategy<Value = DistSpec> {
        prop_oneof![
            Just(DistSpec::Block),
            Just(DistSpec::Cyclic),
            (1usize..5).prop_map(DistSpec::BlockCyclic),
        ]
    }

    proptest! {
        #[test]
        fn owned_intervals_partition_the_dimension(dim in 0usize..65, n in 1usize..9, dist in dist_strategy()) {
            let mut covered = vec![0u32; dim];
            for q in 0..n {
                for i in interval::indices(&local_extent(dim, dist, n, q, 0).owned) {
                    covered[i] += 1;
                }
            }
            prop_assert!(covered.iter().all(|&c| c == 1));
        }

        #[test]
        fn block_is_fair(dim in 0usize..65, n in 1usize..9) {
            let s = sizes(dim, DistSpec::Block, n);
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }

        #[test]
        fn cyclic_equals_block_cyclic_one(dim in 0usize..65, n in 1usize..9, ov in 0usize..3) {
            for q in 0..n {
                prop_assert_eq!(
                    local_extent(dim, DistSpec::Cyclic, n, q, ov),
                    local_extent(dim, DistSpec::BlockCyclic(1), n, q, ov)
                );
            }
        }

        #[test]
        fn col_major_is_reversed_row_major(grid in proptest::collection::vec(1usize..4, 1..5)) {
            let n: usize = grid.iter().product();
            let procs: Vec<usize> = (0..n).collect();
            let col = Map::new(&grid, &[], &procs).unwrap().with_order(Order::ColMajor);
            let rev: Vec<usize> = grid.iter().rev().copied().collect();
            let row = Map::new(&rev, &[], &procs).unwrap();
            for r in 0..n {
                let mut c = row.rank_to_coord(r).unwrap();
                c.reverse();
                prop_assert_eq!(col.rank_to_coord(r).unwrap(), c);
            }
        }

        #[test]
        fn ghosts_stay_in_bounds_and_disjoint(dim in 0usize..40, n in 1usize..6, dist in dist_strategy(), ov in 0usize..4) {
            for q in 0..n {
                let e = local_extent(dim, dist, n, q, ov);
                prop_assert!(interval::intersect_lists(&e.owned, &e.ghost).is_empty());
                prop_assert!(e.ghost.iter().all(|g| g.hi <= dim));
            }
        }
    }
}
