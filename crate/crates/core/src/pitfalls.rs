//! Interval-family descriptions of distributions and the redistribution
//! schedules computed from them.
//!
//! A [`Falls`] is a family of equally spaced line segments; a [`Pitfalls`]
//! instantiates one family per processor by shifting it a fixed displacement.
//! Intersecting the families of a source and a destination processor tells
//! exactly which indices the pair must exchange, without enumerating elements.
//!
//! Block distributions whose extent is not a multiple of the processor count
//! use the fair-share rule, so processors own blocks of different sizes. Those
//! are kept as one single-segment family per processor rather than a single
//! uniform [`Pitfalls`].

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::Result;
use crate::interval::{self, Interval};
use crate::mapdist::{fair_share_sizes, fair_share_start, DistSpec, Map};

/// Segments `[l + k*s, r + k*s]` (inclusive) for `k = 0..n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Falls {
    pub l: usize,
    pub r: usize,
    pub s: usize,
    pub n: usize,
}

impl Falls {
    pub fn new(l: usize, r: usize, s: usize, n: usize) -> Self {
        assert!(l <= r, "falls segment [{l}, {r}] is reversed");
        assert!(n >= 1, "falls needs at least one segment");
        assert!(n == 1 || s > r - l, "stride {s} makes segments of length {} overlap", r - l + 1);
        Falls { l, r, s, n }
    }

    /// Segment length.
    pub fn width(&self) -> usize {
        self.r - self.l + 1
    }

    pub fn count(&self) -> usize {
        self.width() * self.n
    }

    pub fn segment(&self, k: usize) -> Interval {
        Interval::new(self.l + k * self.s, self.r + k * self.s + 1)
    }

    pub fn segments(&self) -> impl Iterator<Item = Interval> + '_ {
        (0..self.n).map(|k| self.segment(k))
    }

    pub fn shifted(&self, by: usize) -> Falls {
        Falls {
            l: self.l + by,
            r: self.r + by,
            ..*self
        }
    }
}

/// One family per processor, obtained by shifting `falls` by `q * d` for processor `q`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pitfalls {
    pub falls: Falls,
    pub d: usize,
    pub p: usize,
}

impl Pitfalls {
    pub fn instantiate(&self, q: usize) -> Falls {
        assert!(q < self.p, "processor {q} out of range for {}", self.p);
        self.falls.shifted(q * self.d)
    }
}

/// Per-processor owned counts of a fair-share block dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FairShareBlock {
    pub sizes: Vec<usize>,
}

impl FairShareBlock {
    pub fn new(dim_size: usize, nprocs: usize) -> Self {
        FairShareBlock {
            sizes: fair_share_sizes(dim_size, nprocs),
        }
    }

    /// One single-segment family per processor; `None` for empty processors.
    pub fn to_falls(&self) -> Vec<Option<Falls>> {
        let dim: usize = self.sizes.iter().sum();
        let n = self.sizes.len();
        self.sizes
            .iter()
            .enumerate()
            .map(|(q, &len)| {
                (len > 0).then(|| {
                    let lo = fair_share_start(dim, n, q);
                    Falls::new(lo, lo + len - 1, len, 1)
                })
            })
            .collect()
    }
}

/// Layout of one dimension of one distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimLayout {
    pub dim_size: usize,
    pub nprocs: usize,
    /// Present when every processor's family is a shift of processor 0's.
    pub uniform: Option<Pitfalls>,
    /// Families owned by each processor; their union is that processor's set.
    pub per_proc: Vec<Vec<Falls>>,
}

impl DimLayout {
    /// Owned global intervals of processor `q`.
    pub fn owned(&self, q: usize) -> Vec<Interval> {
        interval::normalize(self.per_proc[q].iter().flat_map(|f| f.segments()).collect())
    }
}

/// Describes `dist` over `nprocs` processors as interval families.
pub fn dist_to_pitfalls(dim_size: usize, dist: DistSpec, nprocs: usize) -> DimLayout {
    assert!(nprocs >= 1);
    if dim_size == 0 {
        return DimLayout {
            dim_size,
            nprocs,
            uniform: None,
            per_proc: vec![Vec::new(); nprocs],
        };
    }
    match dist.cycle_block() {
        None => {
            let per_proc = FairShareBlock::new(dim_size, nprocs)
                .to_falls()
                .into_iter()
                .map(|f| f.into_iter().collect())
                .collect();
            let uniform = (dim_size % nprocs == 0).then(|| {
                let b = dim_size / nprocs;
                Pitfalls {
                    falls: Falls::new(0, b - 1, b, 1),
                    d: b,
                    p: nprocs,
                }
            });
            DimLayout {
                dim_size,
                nprocs,
                uniform,
                per_proc,
            }
        }
        Some(b) => {
            let period = b * nprocs;
            let per_proc = (0..nprocs)
                .map(|q| {
                    let first = q * b;
                    let mut families = Vec::new();
                    if first >= dim_size {
                        return families;
                    }
                    // Segments k with first + k*period + b <= dim_size are whole.
                    let whole = if first + b <= dim_size {
                        (dim_size - first - b) / period + 1
                    } else {
                        0
                    };
                    if whole > 0 {
                        families.push(Falls::new(first, first + b - 1, period, whole));
                    }
                    let tail = first + whole * period;
                    if tail < dim_size {
                        families.push(Falls::new(tail, dim_size - 1, dim_size - tail, 1));
                    }
                    families
                })
                .collect();
            let uniform = (dim_size % period == 0).then(|| Pitfalls {
                falls: Falls::new(0, b - 1, period, dim_size / period),
                d: b,
                p: nprocs,
            });
            DimLayout {
                dim_size,
                nprocs,
                uniform,
                per_proc,
            }
        }
    }
}

/// Exact intersection of two families as sorted maximal intervals.
///
/// Walks the segments of the sparser family and locates the overlapping
/// segments of the other one arithmetically, so the cost is proportional to
/// the number of segments rather than the number of elements.
pub fn falls_intersect(a: &Falls, b: &Falls) -> Vec<Interval> {
    let (a, b) = if a.n <= b.n { (a, b) } else { (b, a) };
    let stride = b.s.max(1);
    let mut out = Vec::new();
    for seg in a.segments() {
        let (x, y) = (seg.lo, seg.hi - 1);
        if y < b.l {
            continue;
        }
        let k_lo = if x > b.r { (x - b.r).div_ceil(stride) } else { 0 };
        let k_hi = ((y - b.l) / stride).min(b.n - 1);
        if k_lo > k_hi {
            continue;
        }
        for k in k_lo..=k_hi {
            if let Some(iv) = seg.intersect(&b.segment(k)) {
                out.push(iv);
            }
        }
    }
    interval::normalize(out)
}

/// Intersection of two unions of families.
pub fn intersect_families(a: &[Falls], b: &[Falls]) -> Vec<Interval> {
    let mut out = Vec::new();
    for fa in a {
        for fb in b {
            out.extend(falls_intersect(fa, fb));
        }
    }
    interval::normalize(out)
}

/// One block of data moving from `sender` to `receiver`.
///
/// The moved indices are the Cartesian product of the per-dimension interval
/// lists in `block`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transfer {
    pub sender: usize,
    pub receiver: usize,
    pub block: Vec<Vec<Interval>>,
    /// Fills the receiver's overlap (ghost) region rather than owned data.
    pub ghost: bool,
}

impl Transfer {
    pub fn element_count(&self) -> usize {
        self.block.iter().map(|d| interval::count(d)).product()
    }

    pub fn is_local(&self) -> bool {
        self.sender == self.receiver
    }

    fn origin(&self) -> Vec<usize> {
        self.block.iter().map(|d| d.first().map_or(0, |iv| iv.lo)).collect()
    }

    /// The block split into hyper-rectangles, one per combination of intervals.
    pub fn rects(&self) -> Vec<Vec<Interval>> {
        let mut rects = vec![Vec::new()];
        for dim in &self.block {
            rects = rects
                .into_iter()
                .flat_map(|prefix| {
                    dim.iter().map(move |iv| {
                        let mut r = prefix.clone();
                        r.push(*iv);
                        r
                    })
                })
                .collect();
        }
        rects
    }

    pub fn describe_block(&self) -> String {
        self.block.iter().map(|d| interval::format_list(d)).collect::<Vec<_>>().join("x")
    }
}

/// All transfers needed to turn one distribution of an array into another.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RedistSchedule {
    pub shape: Vec<usize>,
    pub transfers: Vec<Transfer>,
}

impl RedistSchedule {
    /// Distinct (sender, receiver) pairs, in schedule order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self.transfers.iter().map(|t| (t.sender, t.receiver)).collect();
        set.into_iter().collect()
    }

    /// True when no data crosses between ranks.
    pub fn is_local_only(&self) -> bool {
        self.transfers.iter().all(Transfer::is_local)
    }

    pub fn sends_from(&self, rank: usize) -> impl Iterator<Item = &Transfer> {
        self.transfers.iter().filter(move |t| t.sender == rank)
    }

    pub fn receives_at(&self, rank: usize) -> impl Iterator<Item = &Transfer> {
        self.transfers.iter().filter(move |t| t.receiver == rank)
    }

    /// CSV table: `sender,receiver,kind,block,elements`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sender,receiver,kind,block,elements\n");
        for t in &self.transfers {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                t.sender,
                t.receiver,
                if t.ghost { "ghost" } else { "owned" },
                t.describe_block(),
                t.element_count()
            );
        }
        out
    }
}

/// Computes the transfers that move an array of `shape` from `src` to `dst`.
///
/// Senders contribute only owned data. When `dst` has overlap, extra transfers
/// flagged `ghost` fill each receiver's ghost region from the source owners.
pub fn compute_schedule(shape: &[usize], src: &Map, dst: &Map) -> Result<RedistSchedule> {
    src.check_shape(shape)?;
    dst.check_shape(shape)?;
    let ndims = shape.len();

    let src_layouts: Vec<DimLayout> = (0..ndims)
        .map(|d| dist_to_pitfalls(shape[d], src.dists()[d], src.grid()[d]))
        .collect();
    let dst_layouts: Vec<DimLayout> = (0..ndims)
        .map(|d| dist_to_pitfalls(shape[d], dst.dists()[d], dst.grid()[d]))
        .collect();

    // pair_table[d][qs][qr]: indices of dimension d shared by source processor qs and destination processor qr.
    let pair_table: Vec<Vec<Vec<Vec<Interval>>>> = (0..ndims)
        .map(|d| {
            (0..src.grid()[d])
                .map(|qs| {
                    (0..dst.grid()[d])
                        .map(|qr| intersect_families(&src_layouts[d].per_proc[qs], &dst_layouts[d].per_proc[qr]))
                        .collect()
                })
                .collect()
        })
        .collect();

    let src_coords: Vec<(usize, Vec<usize>)> = src
        .procs()
        .iter()
        .map(|&r| (r, src.rank_to_coord(r).expect("rank from list")))
        .collect();
    let dst_coords: Vec<(usize, Vec<usize>)> = dst
        .procs()
        .iter()
        .map(|&r| (r, dst.rank_to_coord(r).expect("rank from list")))
        .collect();

    let mut transfers = Vec::new();
    for (sender, cs) in &src_coords {
        for (receiver, cr) in &dst_coords {
            let block: Option<Vec<Vec<Interval>>> = (0..ndims)
                .map(|d| {
                    let iv = &pair_table[d][cs[d]][cr[d]];
                    (!iv.is_empty()).then(|| iv.clone())
                })
                .collect();
            if let Some(block) = block {
                transfers.push(Transfer {
                    sender: *sender,
                    receiver: *receiver,
                    block,
                    ghost: false,
                });
            }
        }
    }

    if dst.has_overlap() {
        let src_owned: Vec<Vec<Vec<Interval>>> = (0..ndims)
            .map(|d| (0..src.grid()[d]).map(|q| src_layouts[d].owned(q)).collect())
            .collect();
        for (receiver, _) in &dst_coords {
            let extents = dst
                .extents(shape, *receiver)?
                .expect("receiver is in the destination map");
            let owned: Vec<Vec<Interval>> = extents.iter().map(|e| e.owned.clone()).collect();
            let local: Vec<Vec<Interval>> = extents.iter().map(|e| e.local()).collect();
            // Ghost region = local box minus owned box, split into disjoint slabs:
            // slab d has owned indices before d, ghost indices in d, any local index after d.
            for (d, ext) in extents.iter().enumerate() {
                if ext.ghost.is_empty() {
                    continue;
                }
                let slab: Vec<Vec<Interval>> = (0..ndims)
                    .map(|k| match k.cmp(&d) {
                        std::cmp::Ordering::Less => owned[k].clone(),
                        std::cmp::Ordering::Equal => ext.ghost.clone(),
                        std::cmp::Ordering::Greater => local[k].clone(),
                    })
                    .collect();
                for (sender, cs) in &src_coords {
                    let block: Option<Vec<Vec<Interval>>> = (0..ndims)
                        .map(|k| {
                            let iv = interval::intersect_lists(&slab[k], &src_owned[k][cs[k]]);
                            (!iv.is_empty()).then_some(iv)
                        })
                        .collect();
                    if let Some(block) = block {
                        transfers.push(Transfer {
                            sender: *sender,
                            receiver: *receiver,
                            block,
                            ghost: true,
                        });
                    }
                }
            }
        }
    }

    transfers.sort_by(|a, b| {
        (a.sender, a.receiver, a.ghost, a.origin()).cmp(&(b.sender, b.receiver, b.ghost, b.origin()))
    });
    Ok(RedistSchedule {
        shape: shape.to_vec(),
        transfers,
    })
}

/// Number of messages a schedule executes.
///
/// A schedule with no cross-rank data needs no messages at all. Otherwise every
/// (sender, receiver) pair is one message, including the block a rank keeps
/// for itself, so a corner turn over `Np` ranks counts `Np^2`.
pub fn schedule_message_count(sched: &RedistSchedule) -> usize {
    if sched.is_local_only() {
        0
    } else {
        sched.pairs().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: usize, hi: usize) -> Interval {
        Interval::new(lo, hi)
    }

    fn generated(f: &Falls) -> BTreeSet<usize> {
        (0..f.n).flat_map(|k| (f.l + k * f.s)..=(f.r + k * f.s)).collect()
    }

    #[test]
    fn block_sixteen_over_five() {
        let layout = dist_to_pitfalls(16, DistSpec::Block, 5);
        let sizes: Vec<usize> = layout.per_proc.iter().map(|fs| fs.iter().map(Falls::count).sum()).collect();
        assert_eq!(sizes, vec![4, 3, 3, 3, 3]);
        assert!(layout.uniform.is_none());
        assert_eq!(FairShareBlock::new(16, 5).sizes, vec![4, 3, 3, 3, 3]);
    }

    #[test]
    fn cyclic_eight_over_two() {
        // i mod 2 == q for q in {0, 1}: segments of width 1, stride 2, 4 of them, shifted by 1.
        let layout = dist_to_pitfalls(8, DistSpec::Cyclic, 2);
        assert_eq!(
            layout.uniform,
            Some(Pitfalls {
                falls: Falls::new(0, 0, 2, 4),
                d: 1,
                p: 2
            })
        );
        let pit = layout.uniform.unwrap();
        for q in 0..2 {
            let brute: BTreeSet<usize> = (0..8).filter(|i| i % 2 == q).collect();
            assert_eq!(generated(&pit.instantiate(q)), brute);
        }
    }

    #[test]
    fn empty_dimension() {
        let layout = dist_to_pitfalls(0, DistSpec::BlockCyclic(3), 4);
        assert!(layout.per_proc.iter().all(Vec::is_empty));
    }

    #[test]
    fn intersect_examples() {
        let a = Falls::new(0, 3, 8, 2);
        assert_eq!(falls_intersect(&a, &a), vec![iv(0, 4), iv(8, 12)]);
        let b = Falls::new(4, 7, 8, 2);
        assert!(falls_intersect(&a, &b).is_empty());
        // block [0,7] against stride-2 cyclic over 16
        let block = Falls::new(0, 7, 8, 1);
        let cyc = Falls::new(0, 0, 2, 8);
        assert_eq!(falls_intersect(&block, &cyc), vec![iv(0, 1), iv(2, 3), iv(4, 5), iv(6, 7)]);
    }

    #[test]
    fn adjacent_segments_merge() {
        let contiguous = Falls::new(0, 1, 2, 4);
        let block = Falls::new(0, 7, 8, 1);
        assert_eq!(falls_intersect(&contiguous, &block), vec![iv(0, 8)]);
    }

    #[test]
    fn identical_maps_need_no_messages() {
        let m = Map::new(&[2, 2], &[DistSpec::Cyclic, DistSpec::Block], &[0, 1, 2, 3]).unwrap();
        let s = compute_schedule(&[6, 5], &m, &m).unwrap();
        assert!(s.transfers.iter().all(Transfer::is_local));
        assert_eq!(schedule_message_count(&s), 0);
    }

    #[test]
    fn corner_turn_four_by_four() {
        let rows = Map::new(&[2, 1], &[], &[0, 1]).unwrap();
        let cols = Map::new(&[1, 2], &[], &[0, 1]).unwrap();
        let s = compute_schedule(&[4, 4], &rows, &cols).unwrap();
        assert_eq!(s.transfers.len(), 4);
        assert!(s.transfers.iter().all(|t| t.element_count() == 4 && t.rects().len() == 1));
        assert_eq!(schedule_message_count(&s), 4);
        assert_eq!(s.transfers[1].block, vec![vec![iv(0, 2)], vec![iv(2, 4)]]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = Map::block(&[2]).unwrap();
        assert!(compute_schedule(&[4, 4], &m, &m).is_err());
    }

    #[test]
    fn ghost_transfers_fill_overlap() {
        let src = Map::new(&[2], &[], &[0, 1]).unwrap();
        let dst = Map::new(&[2], &[], &[0, 1]).unwrap().with_overlap(&[1]).unwrap();
        let s = compute_schedule(&[8], &src, &dst).unwrap();
        let ghosts: Vec<&Transfer> = s.transfers.iter().filter(|t| t.ghost).collect();
        assert_eq!(ghosts.len(), 1);
        assert_eq!((ghosts[0].sender, ghosts[0].receiver), (1, 0));
        assert_eq!(ghosts[0].block, vec![vec![iv(4, 5)]]);
    }

    #[test]
    fn csv_table() {
        let rows = Map::new(&[2, 1], &[], &[0, 1]).unwrap();
        let cols = Map::new(&[1, 2], &[], &[0, 1]).unwrap();
        let csv = compute_schedule(&[4, 4], &rows, &cols).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "sender,receiver,kind,block,elements");
        assert_eq!(lines[2], "0,1,owned,[0,2)x[2,4),4");
        assert_eq!(lines.len(), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn falls_strategy() -> impl Strategy<Value = Falls> {
            (0usize..=16, 0usize..=16, 1usize..=16, 1usize..=16).prop_filter_map("valid falls", |(l, w, s, n)| {
                let r = l + w;
                (n == 1 || s > w).then(|| Falls::new(l, r, s, n))
            })
        }

        proptest! {
            #[test]
            fn intersect_matches_set_intersection(a in falls_strategy(), b in falls_strategy()) {
                let got: BTreeSet<usize> = interval::indices(&falls_intersect(&a, &b)).collect();
                let want: BTreeSet<usize> = generated(&a).intersection(&generated(&b)).copied().collect();
                prop_assert_eq!(got, want);
                let ivs = falls_intersect(&a, &b);
                prop_assert!(ivs.windows(2).all(|w| w[0].hi < w[1].lo));
            }

            #[test]
            fn layouts_match_brute_force_ownership(dim in 0usize..40, p in 1usize..7, kind in 0usize..4) {
                let dist = [DistSpec::Block, DistSpec::Cyclic, DistSpec::BlockCyclic(2), DistSpec::BlockCyclic(3)][kind];
                let layout = dist_to_pitfalls(dim, dist, p);
                for q in 0..p {
                    let got: BTreeSet<usize> = layout.per_proc[q].iter().flat_map(generated).collect();
                    let want: BTreeSet<usize> = (0..dim).filter(|&i| brute_owner(i, dim, dist, p) == q).collect();
                    prop_assert_eq!(&got, &want);
                    let mapdist: BTreeSet<usize> =
                        interval::indices(&crate::mapdist::local_extent(dim, dist, p, q, 0).owned).collect();
                    prop_assert_eq!(&got, &mapdist);
                    if let Some(pit) = layout.uniform {
                        prop_assert_eq!(generated(&pit.instantiate(q)), want);
                    }
                }
            }
        }

        /// Owner of index `i`, computed element by element.
        fn brute_owner(i: usize, dim: usize, dist: DistSpec, p: usize) -> usize {
            match dist {
                DistSpec::Block => {
                    // hand out the remainder one by one from processor 0
                    let mut start = 0;
                    for q in 0..p {
                        let len = dim / p + usize::from(q < dim % p);
                        if i < start + len {
                            return q;
                        }
                        start += len;
                    }
                    unreachable!()
                }
                DistSpec::Cyclic => i % p,
                DistSpec::BlockCyclic(b) => (i / b) % p,
            }
        }
    }
}
