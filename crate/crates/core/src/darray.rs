//! Distributed arrays: constructors, element-wise arithmetic, redistribution
//! by assignment, aggregation and the parallel support functions.
//!
//! Operations that communicate (`assign`, `assign_redistribute`, `agg`,
//! `agg_all`, `sync_overlap`, `synch`) are collective: every rank of the
//! communicator must call them in the same order, including ranks that are not
//! in the array's processor list. Every function here also accepts plain
//! arrays (the map `1`) and then behaves like its serial counterpart.

use std::fmt::Write as _;

use ndarray::{ArrayD, ArrayViewMutD, Dimension, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::fsmpi::{CommContext, DenseArray, Payload};
use crate::interval::{self, Interval};
use crate::mapdist::{is_serial_map, Extent, Map, MapArg};
use crate::pitfalls::{compute_schedule, dist_to_pitfalls, DimLayout, RedistSchedule, Transfer};

/// Global indices held by one rank, per dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalRange {
    pub dims: Vec<Vec<Interval>>,
}

impl GlobalRange {
    pub fn count(&self) -> usize {
        self.dims.iter().map(|d| interval::count(d)).product()
    }
}

/// Index bookkeeping for one dimension of local storage.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Axis {
    intervals: Vec<Interval>,
    offsets: Vec<usize>,
}

impl Axis {
    fn new(intervals: Vec<Interval>) -> Self {
        let mut offsets = Vec::with_capacity(intervals.len());
        let mut acc = 0;
        for iv in &intervals {
            offsets.push(acc);
            acc += iv.len();
        }
        Axis { intervals, offsets }
    }

    fn len(&self) -> usize {
        interval::count(&self.intervals)
    }

    /// Local positions of the given global indices, which must all be stored here.
    fn positions(&self, list: &[Interval]) -> Vec<usize> {
        let mut out = Vec::with_capacity(interval::count(list));
        for iv in list {
            let k = self.intervals.partition_point(|x| x.hi <= iv.lo);
            let host = self.intervals.get(k).copied();
            assert!(
                host.is_some_and(|h| h.lo <= iv.lo && iv.hi <= h.hi),
                "indices {iv} are not held locally"
            );
            let host = host.unwrap();
            let base = self.offsets[k] + (iv.lo - host.lo);
            out.extend(base..base + iv.len());
        }
        out
    }
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Calls `f` with the flat offset of every element of the product of `pos`, in row-major order.
fn for_each_offset(pos: &[Vec<usize>], strides: &[usize], f: &mut impl FnMut(usize)) {
    fn go(pos: &[Vec<usize>], strides: &[usize], base: usize, f: &mut impl FnMut(usize)) {
        match pos.len() {
            0 => f(base),
            1 => {
                for &p in &pos[0] {
                    f(base + p * strides[0]);
                }
            }
            _ => {
                for &p in &pos[0] {
                    go(&pos[1..], &strides[1..], base + p * strides[0], f);
                }
            }
        }
    }
    if pos.iter().any(Vec::is_empty) {
        return;
    }
    go(pos, strides, 0, f);
}

/// Splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-rank seed derived from a user seed, so every rank draws a different stream.
pub fn rank_seed(seed: u64, rank: usize) -> u64 {
    splitmix64(seed ^ splitmix64(rank as u64))
}

/// A global array partitioned over the ranks of a map.
#[derive(Clone, Debug)]
pub struct DArray<T: Element> {
    shape: Vec<usize>,
    map: Map,
    rank: usize,
    extents: Option<Vec<Extent>>,
    axes: Vec<Axis>,
    layouts: Vec<DimLayout>,
    local: ArrayD<T>,
}

impl<T: Element> DArray<T> {
    /// Builds the local part of an array whose global element at `idx` is `f(idx)`.
    pub fn from_fn(shape: &[usize], map: &Map, rank: usize, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let mut a = DArray::filled(shape, map, rank, T::zero())?;
        let global: Vec<Vec<usize>> = a.axes.iter().map(|ax| interval::indices(&ax.intervals).collect()).collect();
        let mut idx = vec![0; shape.len()];
        for (local_idx, v) in a.local.indexed_iter_mut() {
            for d in 0..idx.len() {
                idx[d] = global[d][local_idx[d]];
            }
            *v = f(&idx);
        }
        Ok(a)
    }

    pub fn filled(shape: &[usize], map: &Map, rank: usize, value: T) -> Result<Self> {
        if shape.is_empty() || shape.len() > crate::mapdist::MAX_DIMS {
            return Err(Error::DimensionMismatch(format!(
                "arrays have 1 to {} dimensions, got {}",
                crate::mapdist::MAX_DIMS,
                shape.len()
            )));
        }
        map.check_shape(shape)?;
        let extents = map.extents(shape, rank)?;
        let axes: Vec<Axis> = match &extents {
            Some(ext) => ext.iter().map(|e| Axis::new(e.local())).collect(),
            None => vec![Axis::new(Vec::new()); shape.len()],
        };
        let layouts = (0..shape.len())
            .map(|d| dist_to_pitfalls(shape[d], map.dists()[d], map.grid()[d]))
            .collect();
        let local_shape: Vec<usize> = axes.iter().map(Axis::len).collect();
        Ok(DArray {
            shape: shape.to_vec(),
            map: map.clone(),
            rank,
            extents,
            axes,
            layouts,
            local: ArrayD::from_elem(IxDyn(&local_shape), value),
        })
    }

    /// Takes this rank's part of a full global array.
    pub fn from_global(global: &ArrayD<T>, map: &Map, rank: usize) -> Result<Self> {
        let global = global.as_standard_layout();
        let data = global.as_slice().expect("standard layout");
        let strides = row_major_strides(global.shape());
        DArray::from_fn(global.shape(), map, rank, |idx| {
            data[idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>()]
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn map(&self) -> &Map {
        &self.map
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Per-dimension owned and ghost intervals, `None` outside the processor list.
    pub fn extents(&self) -> Option<&[Extent]> {
        self.extents.as_deref()
    }

    /// Cached interval families of every dimension.
    pub fn layouts(&self) -> &[DimLayout] {
        &self.layouts
    }

    /// Owned plus ghost storage, in global index order per dimension.
    pub fn local(&self) -> &ArrayD<T> {
        &self.local
    }

    /// Mutable view of the local storage; use [`DArray::put_local`] to replace it wholesale.
    pub fn local_mut(&mut self) -> ArrayViewMutD<'_, T> {
        self.local.view_mut()
    }

    /// Replaces the local storage; `data` must have the current local shape.
    pub fn put_local(&mut self, data: ArrayD<T>) -> Result<()> {
        if data.shape() != self.local.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.local.shape().to_vec(),
                found: data.shape().to_vec(),
            });
        }
        self.local = data.as_standard_layout().into_owned();
        Ok(())
    }

    /// Owned global intervals of `rank` under this array's map.
    pub fn global_block_range(&self, rank: usize) -> Result<GlobalRange> {
        let ext = self.map.extents(&self.shape, rank)?.ok_or(Error::NotInMap(rank))?;
        Ok(GlobalRange {
            dims: ext.into_iter().map(|e| e.owned).collect(),
        })
    }

    /// Owned ranges of every rank in the processor list, in list order.
    pub fn global_block_ranges(&self) -> Vec<(usize, GlobalRange)> {
        self.map
            .procs()
            .iter()
            .map(|&r| (r, self.global_block_range(r).expect("rank from the list")))
            .collect()
    }

    fn owned_positions(&self) -> Vec<Vec<usize>> {
        match &self.extents {
            Some(ext) => ext.iter().zip(&self.axes).map(|(e, ax)| ax.positions(&e.owned)).collect(),
            None => vec![Vec::new(); self.shape.len()],
        }
    }

    /// Copies out the owned elements (no ghosts) as an array.
    pub fn owned(&self) -> ArrayD<T> {
        let pos = self.owned_positions();
        let shape: Vec<usize> = pos.iter().map(Vec::len).collect();
        let values = self.gather(&pos);
        ArrayD::from_shape_vec(IxDyn(&shape), values).expect("gathered length matches shape")
    }

    fn gather(&self, pos: &[Vec<usize>]) -> Vec<T> {
        let data = self.local.as_slice().expect("local storage is standard layout");
        let strides = row_major_strides(self.local.shape());
        let mut out = Vec::with_capacity(pos.iter().map(Vec::len).product());
        for_each_offset(pos, &strides, &mut |off| out.push(data[off]));
        out
    }

    fn scatter(&mut self, pos: &[Vec<usize>], values: &[T]) {
        let strides = row_major_strides(self.local.shape());
        let data = self.local.as_slice_mut().expect("local storage is standard layout");
        let mut it = values.iter();
        for_each_offset(pos, &strides, &mut |off| data[off] = *it.next().expect("enough values"));
        debug_assert!(it.next().is_none());
    }

    fn block_positions(&self, block: &[Vec<Interval>]) -> Vec<Vec<usize>> {
        block.iter().zip(&self.axes).map(|(b, ax)| ax.positions(b)).collect()
    }

    fn same_layout(&self, other: &DArray<T>) -> bool {
        self.shape == other.shape && self.map == other.map
    }

    /// Combines two arrays with identical maps element by element, without communication.
    pub fn zip_with(&self, other: &DArray<T>, f: impl Fn(T, T) -> T) -> Result<DArray<T>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        if self.map != other.map {
            return Err(Error::MapMismatch);
        }
        let mut out = self.clone();
        out.local.zip_mut_with(&other.local, |a, &b| *a = f(*a, b));
        Ok(out)
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> DArray<T> {
        let mut out = self.clone();
        out.local.mapv_inplace(f);
        out
    }

    /// One-line record of this rank's part: owned and ghost ranges plus a CRC32 of the local data.
    pub fn describe(&self) -> String {
        let mut bytes = Vec::new();
        for v in self.local.iter() {
            v.append_le_bytes(&mut bytes);
        }
        let (owned, ghost) = match &self.extents {
            Some(ext) => (
                ext.iter().map(|e| interval::format_list(&e.owned)).collect::<Vec<_>>().join("x"),
                ext.iter().map(|e| interval::format_list(&e.ghost)).collect::<Vec<_>>().join("x"),
            ),
            None => ("-".to_string(), "-".to_string()),
        };
        let mut line = String::new();
        let _ = write!(
            line,
            "rank={} owned={} ghost={} local_shape={:?} crc32={:08x}",
            self.rank,
            owned,
            ghost,
            self.local.shape(),
            crc32fast::hash(&bytes)
        );
        line
    }
}

/// Either a distributed array or a plain local array (the map `1`).
#[derive(Clone, Debug)]
pub enum AnyArray<T: Element> {
    Plain(ArrayD<T>),
    Dist(DArray<T>),
}

impl<T: Element> AnyArray<T> {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyArray::Plain(a) => a.shape(),
            AnyArray::Dist(d) => d.shape(),
        }
    }

    pub fn is_distributed(&self) -> bool {
        matches!(self, AnyArray::Dist(_))
    }

    pub fn as_dist(&self) -> Option<&DArray<T>> {
        match self {
            AnyArray::Dist(d) => Some(d),
            AnyArray::Plain(_) => None,
        }
    }

    pub fn as_dist_mut(&mut self) -> Option<&mut DArray<T>> {
        match self {
            AnyArray::Dist(d) => Some(d),
            AnyArray::Plain(_) => None,
        }
    }

    /// Local storage without copying: the whole array when plain.
    pub fn local_data(&self) -> &ArrayD<T> {
        match self {
            AnyArray::Plain(p) => p,
            AnyArray::Dist(d) => &d.local,
        }
    }

    pub fn local_data_mut(&mut self) -> ArrayViewMutD<'_, T> {
        match self {
            AnyArray::Plain(p) => p.view_mut(),
            AnyArray::Dist(d) => d.local.view_mut(),
        }
    }

    pub fn as_plain(&self) -> Option<&ArrayD<T>> {
        match self {
            AnyArray::Plain(a) => Some(a),
            AnyArray::Dist(_) => None,
        }
    }

    /// Builds a plain array or this rank's part of a distributed one from a global index function.
    pub fn from_fn(shape: &[usize], map: &MapArg, rank: usize, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        match map {
            MapArg::Map(m) => Ok(AnyArray::Dist(DArray::from_fn(shape, m, rank, f)?)),
            other => {
                is_serial_map(other)?;
                Ok(AnyArray::Plain(ArrayD::from_shape_fn(IxDyn(shape), |idx| {
                    f(idx.slice())
                })))
            }
        }
    }

    /// `self op other`, element by element.
    pub fn binary(&self, op: ElemOp, other: &AnyArray<T>) -> Result<AnyArray<T>> {
        match (self, other) {
            (AnyArray::Plain(a), AnyArray::Plain(b)) => {
                if a.shape() != b.shape() {
                    return Err(Error::ShapeMismatch {
                        expected: a.shape().to_vec(),
                        found: b.shape().to_vec(),
                    });
                }
                let mut out = a.clone();
                out.zip_mut_with(b, |x, &y| *x = op.apply(*x, y));
                Ok(AnyArray::Plain(out))
            }
            (AnyArray::Dist(a), AnyArray::Dist(b)) => Ok(AnyArray::Dist(a.zip_with(b, |x, y| op.apply(x, y))?)),
            _ => Err(Error::MapMismatch),
        }
    }

    /// `self op s` for a scalar `s`.
    pub fn scalar(&self, op: ElemOp, s: T) -> AnyArray<T> {
        match self {
            AnyArray::Plain(a) => AnyArray::Plain(a.mapv(|x| op.apply(x, s))),
            AnyArray::Dist(d) => AnyArray::Dist(d.map_values(|x| op.apply(x, s))),
        }
    }

    pub fn add(&self, other: &AnyArray<T>) -> Result<AnyArray<T>> {
        self.binary(ElemOp::Add, other)
    }

    pub fn sub(&self, other: &AnyArray<T>) -> Result<AnyArray<T>> {
        self.binary(ElemOp::Sub, other)
    }

    pub fn mul(&self, other: &AnyArray<T>) -> Result<AnyArray<T>> {
        self.binary(ElemOp::Mul, other)
    }

    pub fn div(&self, other: &AnyArray<T>) -> Result<AnyArray<T>> {
        self.binary(ElemOp::Div, other)
    }

    /// `s * self`
    pub fn scale(&self, s: T) -> AnyArray<T> {
        match self {
            AnyArray::Plain(a) => AnyArray::Plain(a.mapv(|x| s * x)),
            AnyArray::Dist(d) => AnyArray::Dist(d.map_values(|x| s * x)),
        }
    }

    /// `self + s`
    pub fn offset(&self, s: T) -> AnyArray<T> {
        self.scalar(ElemOp::Add, s)
    }

    pub fn describe(&self) -> String {
        match self {
            AnyArray::Dist(d) => d.describe(),
            AnyArray::Plain(a) => {
                let mut bytes = Vec::new();
                for v in a.iter() {
                    v.append_le_bytes(&mut bytes);
                }
                format!("plain shape={:?} crc32={:08x}", a.shape(), crc32fast::hash(&bytes))
            }
        }
    }
}

/// Arithmetic operators available element-wise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ElemOp {
    pub fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            ElemOp::Add => a + b,
            ElemOp::Sub => a - b,
            ElemOp::Mul => a * b,
            ElemOp::Div => a / b,
        }
    }
}

/// Right-hand side of an element-wise operation.
pub enum Operand<'a, T: Element> {
    Array(&'a AnyArray<T>),
    Scalar(T),
}

/// `a op b` where `b` is an array with the same map, or a scalar.
pub fn elementwise<T: Element>(op: ElemOp, a: &AnyArray<T>, b: Operand<'_, T>) -> Result<AnyArray<T>> {
    match b {
        Operand::Array(b) => a.binary(op, b),
        Operand::Scalar(s) => Ok(a.scalar(op, s)),
    }
}

pub fn constant<T: Element>(shape: &[usize], map: &MapArg, rank: usize, value: T) -> Result<AnyArray<T>> {
    match map {
        MapArg::Map(m) => Ok(AnyArray::Dist(DArray::filled(shape, m, rank, value)?)),
        other => {
            is_serial_map(other)?;
            Ok(AnyArray::Plain(ArrayD::from_elem(IxDyn(shape), value)))
        }
    }
}

pub fn zeros<T: Element>(shape: &[usize], map: &MapArg, rank: usize) -> Result<AnyArray<T>> {
    constant(shape, map, rank, T::zero())
}

pub fn ones<T: Element>(shape: &[usize], map: &MapArg, rank: usize) -> Result<AnyArray<T>> {
    constant(shape, map, rank, T::one())
}

/// Uniform random array; each rank draws from its own stream seeded by [`rank_seed`].
pub fn rand<T: Element>(shape: &[usize], map: &MapArg, rank: usize, seed: u64) -> Result<AnyArray<T>> {
    let mut a = zeros::<T>(shape, map, rank)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rank_seed(seed, rank));
    let fill = |arr: &mut ArrayD<T>, rng: &mut ChaCha8Rng| arr.iter_mut().for_each(|v| *v = T::sample(rng));
    match &mut a {
        AnyArray::Plain(p) => fill(p, &mut rng),
        AnyArray::Dist(d) => fill(&mut d.local, &mut rng),
    }
    Ok(a)
}

/// Local part of an array; the whole array when it is plain.
pub fn local<T: Element>(a: &AnyArray<T>) -> ArrayD<T> {
    match a {
        AnyArray::Plain(p) => p.clone(),
        AnyArray::Dist(d) => d.local.clone(),
    }
}

/// Replaces the local part of an array; the whole array when it is plain.
pub fn put_local<T: Element>(a: &mut AnyArray<T>, data: ArrayD<T>) -> Result<()> {
    match a {
        AnyArray::Plain(p) => {
            if p.shape() != data.shape() {
                return Err(Error::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    found: data.shape().to_vec(),
                });
            }
            *p = data;
            Ok(())
        }
        AnyArray::Dist(d) => d.put_local(data),
    }
}

/// Owned global range of `rank`; a plain array is wholly local to every rank.
pub fn global_block_range<T: Element>(a: &AnyArray<T>, rank: usize) -> Result<GlobalRange> {
    match a {
        AnyArray::Plain(p) => Ok(full_range(p.shape())),
        AnyArray::Dist(d) => d.global_block_range(rank),
    }
}

/// Owned global ranges of every rank in the processor list; a single full range for plain arrays.
pub fn global_block_ranges<T: Element>(a: &AnyArray<T>) -> Vec<(usize, GlobalRange)> {
    match a {
        AnyArray::Plain(p) => vec![(0, full_range(p.shape()))],
        AnyArray::Dist(d) => d.global_block_ranges(),
    }
}

fn full_range(shape: &[usize]) -> GlobalRange {
    GlobalRange {
        dims: shape
            .iter()
            .map(|&n| if n == 0 { Vec::new() } else { vec![Interval::new(0, n)] })
            .collect(),
    }
}

/// The processor list laid out on the grid according to the map's order.
pub fn grid(map: &Map) -> ArrayD<usize> {
    ArrayD::from_shape_fn(IxDyn(map.grid()), |idx| {
        map.coord_to_rank(idx.slice()).expect("coordinate inside grid")
    })
}

pub fn inmap(map: &Map, rank: usize) -> bool {
    map.contains(rank)
}

/// Message accounting of one redistribution, from the calling rank's side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RedistStats {
    /// Blocks this rank delivered, counting the one it keeps for itself; zero
    /// when the redistribution needed no communication at all.
    pub messages: usize,
    /// Files actually written through the messaging layer.
    pub remote_sends: usize,
    pub local_copies: usize,
}

fn transfer_error(t: &Transfer, source: Error) -> Error {
    Error::Redistribution {
        sender: t.sender,
        receiver: t.receiver,
        block: t.describe_block(),
        source: Box::new(source),
    }
}

/// Moves data along `transfers` from `src` into `dst` (which may be a copy of the same array).
fn execute<T: Element>(
    ctx: &mut CommContext,
    tag: u64,
    transfers: &[&Transfer],
    src: &DArray<T>,
    dst: &mut DArray<T>,
) -> Result<RedistStats> {
    let me = ctx.rank();
    let mut stats = RedistStats::default();

    // Post every outgoing message first; one coalesced message per receiver.
    let mut receivers: Vec<usize> = transfers.iter().filter(|t| t.sender == me).map(|t| t.receiver).collect();
    receivers.dedup();
    let mut local_blocks = Vec::new();
    for &receiver in &receivers {
        let blocks: Vec<&&Transfer> = transfers
            .iter()
            .filter(|t| t.sender == me && t.receiver == receiver)
            .collect();
        let mut values = Vec::with_capacity(blocks.iter().map(|t| t.element_count()).sum());
        for t in &blocks {
            values.extend(src.gather(&src.block_positions(&t.block)));
        }
        stats.messages += 1;
        if receiver == me {
            stats.local_copies += 1;
            local_blocks = values;
        } else {
            ctx.send_tagged(receiver, tag, &Payload::Dense(DenseArray::vector(values)))
                .map_err(|e| transfer_error(blocks[0], e))?;
            stats.remote_sends += 1;
        }
    }

    let mut senders: Vec<usize> = transfers.iter().filter(|t| t.receiver == me).map(|t| t.sender).collect();
    senders.sort_unstable();
    senders.dedup();
    for sender in senders {
        let blocks: Vec<&&Transfer> = transfers
            .iter()
            .filter(|t| t.sender == sender && t.receiver == me)
            .collect();
        let values = if sender == me {
            std::mem::take(&mut local_blocks)
        } else {
            let payload = ctx.recv(sender, tag).map_err(|e| transfer_error(blocks[0], e))?;
            payload
                .into_dense()
                .and_then(DenseArray::into_vec::<T>)
                .ok_or_else(|| {
                    transfer_error(
                        blocks[0],
                        Error::Decode(format!("expected a {:?} vector", T::ELEM_TYPE)),
                    )
                })?
        };
        let expected: usize = blocks.iter().map(|t| t.element_count()).sum();
        if values.len() != expected {
            return Err(transfer_error(
                blocks[0],
                Error::Decode(format!("received {} values, expected {expected}", values.len())),
            ));
        }
        let mut offset = 0;
        for t in blocks {
            let n = t.element_count();
            dst.scatter(&dst.block_positions(&t.block), &values[offset..offset + n]);
            offset += n;
        }
    }
    Ok(stats)
}

/// `dst[:, ...] = src`: copies `src` into `dst`'s distribution.
///
/// Identical maps reduce to a local copy with no messages. Otherwise all
/// sends are posted before any receive, so the exchange cannot deadlock.
/// Ghost regions of `dst` are refreshed from the new owners.
pub fn assign_redistribute<T: Element>(ctx: &mut CommContext, dst: &mut DArray<T>, src: &DArray<T>) -> Result<RedistStats> {
    if dst.shape != src.shape {
        return Err(Error::ShapeMismatch {
            expected: dst.shape.clone(),
            found: src.shape.clone(),
        });
    }
    if dst.same_layout(src) {
        dst.local.assign(&src.local);
        return Ok(RedistStats::default());
    }
    let sched = compute_schedule(&src.shape, &src.map, &dst.map)?;
    redistribute_with(ctx, dst, src, &sched)
}

/// Executes a precomputed schedule (as returned by [`compute_schedule`] for these maps).
pub fn redistribute_with<T: Element>(
    ctx: &mut CommContext,
    dst: &mut DArray<T>,
    src: &DArray<T>,
    sched: &RedistSchedule,
) -> Result<RedistStats> {
    let tag = ctx.next_collective_tag();
    let transfers: Vec<&Transfer> = sched.transfers.iter().collect();
    let mut stats = execute(ctx, tag, &transfers, src, dst)?;
    if sched.is_local_only() {
        stats.messages = 0;
    }
    Ok(stats)
}

/// Refreshes the ghost (overlap) region of `a` from the owners of those indices.
pub fn sync_overlap<T: Element>(ctx: &mut CommContext, a: &mut DArray<T>) -> Result<RedistStats> {
    if !a.map.has_overlap() {
        return Ok(RedistStats::default());
    }
    let sched = compute_schedule(&a.shape, &a.map, &a.map)?;
    let ghosts: Vec<&Transfer> = sched.transfers.iter().filter(|t| t.ghost).collect();
    let tag = ctx.next_collective_tag();
    let src = a.clone();
    execute(ctx, tag, &ghosts, &src, a)
}

/// General assignment `dst[...] = src` over plain and distributed operands.
pub fn assign<T: Element>(ctx: &mut CommContext, dst: &mut AnyArray<T>, src: &AnyArray<T>) -> Result<RedistStats> {
    if dst.shape() != src.shape() {
        return Err(Error::ShapeMismatch {
            expected: dst.shape().to_vec(),
            found: src.shape().to_vec(),
        });
    }
    match (dst, src) {
        (AnyArray::Dist(d), AnyArray::Dist(s)) => assign_redistribute(ctx, d, s),
        (AnyArray::Dist(d), AnyArray::Plain(p)) => {
            *d = DArray::from_global(p, &d.map.clone(), d.rank)?;
            Ok(RedistStats::default())
        }
        (AnyArray::Plain(d), AnyArray::Plain(p)) => {
            d.assign(p);
            Ok(RedistStats::default())
        }
        (AnyArray::Plain(d), src @ AnyArray::Dist(_)) => {
            *d = agg_all(ctx, src)?;
            Ok(RedistStats::default())
        }
    }
}

/// Gathers a distributed array onto the leader (lowest rank of the processor list).
///
/// The leader gets the whole global array. Other ranks in the list get their
/// owned block back; ranks outside the list get an empty array. A plain array
/// is returned unchanged.
pub fn agg<T: Element>(ctx: &mut CommContext, a: &AnyArray<T>) -> Result<ArrayD<T>> {
    let d = match a {
        AnyArray::Plain(p) => return Ok(p.clone()),
        AnyArray::Dist(d) => d,
    };
    let tag = ctx.next_collective_tag();
    let me = ctx.rank();
    let leader = d.map.leader();
    if !d.map.contains(me) {
        return Ok(ArrayD::from_shape_vec(IxDyn(&vec![0; d.shape.len()]), Vec::new()).expect("empty"));
    }
    let mine = d.owned();
    if me != leader {
        let payload = DenseArray::from_vec(mine.shape().to_vec(), mine.iter().copied().collect())
            .map_err(|e| Error::Decode(e))?;
        ctx.send_tagged(leader, tag, &Payload::Dense(payload))?;
        return Ok(mine);
    }

    let mut full = ArrayD::from_elem(IxDyn(&d.shape), T::zero());
    let strides = row_major_strides(&d.shape);
    let data = full.as_slice_mut().expect("fresh array is standard layout");
    for &r in d.map.procs() {
        let range = d.global_block_range(r)?;
        let values: Vec<T> = if r == me {
            mine.iter().copied().collect()
        } else {
            ctx.recv(r, tag)?
                .into_dense()
                .and_then(DenseArray::into_vec::<T>)
                .ok_or_else(|| Error::Decode(format!("aggregation block from rank {r} has the wrong type")))?
        };
        if values.len() != range.count() {
            return Err(Error::Decode(format!(
                "rank {r} sent {} values for a block of {}",
                values.len(),
                range.count()
            )));
        }
        let pos: Vec<Vec<usize>> = range.dims.iter().map(|d| interval::indices(d).collect()).collect();
        let mut it = values.into_iter();
        for_each_offset(&pos, &strides, &mut |off| data[off] = it.next().expect("counted"));
    }
    Ok(full)
}

/// [`agg`] followed by a broadcast from the leader: every rank gets the whole array.
pub fn agg_all<T: Element>(ctx: &mut CommContext, a: &AnyArray<T>) -> Result<ArrayD<T>> {
    let d = match a {
        AnyArray::Plain(p) => return Ok(p.clone()),
        AnyArray::Dist(d) => d,
    };
    let leader = d.map.leader();
    let full = agg(ctx, a)?;
    let payload = (ctx.rank() == leader)
        .then(|| DenseArray::from_vec(full.shape().to_vec(), full.iter().copied().collect()).map(Payload::Dense))
        .transpose()
        .map_err(Error::Decode)?;
    let got = ctx.bcast(leader, payload)?;
    let dense = got
        .into_dense()
        .ok_or_else(|| Error::Decode("broadcast array is not dense".into()))?;
    let shape = dense.shape().to_vec();
    let values = dense
        .into_vec::<T>()
        .ok_or_else(|| Error::Decode("broadcast array has the wrong type".into()))?;
    ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|e| Error::Decode(e.to_string()))
}

/// Barrier over the whole communicator: gather to rank 0, then release.
pub fn synch(ctx: &mut CommContext) -> Result<()> {
    let tag = ctx.next_collective_tag();
    if ctx.size() == 1 {
        return Ok(());
    }
    if ctx.rank() == 0 {
        for r in 1..ctx.size() {
            ctx.recv(r, tag)?;
        }
        for r in 1..ctx.size() {
            ctx.send_tagged(r, tag + 1, &Payload::empty())?;
        }
    } else {
        ctx.send_tagged(0, tag, &Payload::empty())?;
        ctx.recv(0, tag + 1)?;
    }
    Ok(())
}
