//! HPC Challenge style kernels written against distributed arrays: STREAM
//! triad, a four-step parallel 1-D FFT, RandomAccess, and a ping-pong probe of
//! the messaging layer.
//!
//! Every kernel is an SPMD routine: all ranks call it with the same arguments.
//! Correctness is always judged on the leader against an independent serial
//! computation and the verdict broadcast, so every rank returns the same flag.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::Axis;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::darray::{self, splitmix64, AnyArray, DArray};
use crate::error::{Error, Result};
use crate::fsmpi::{CommContext, DenseArray, Payload, COLLECTIVE_TAG_SPAN};
use crate::interval::Interval;
use crate::mapdist::{fair_share_sizes, fair_share_start, DistSpec, Map, MapArg, Order};

pub const CSV_HEADER: &str = "kernel,np,size,seconds,metric,correct";

/// Seeds of the deterministic STREAM inputs.
pub const STREAM_SEED_B: u64 = 0x5EED_0000_0000_000B;
pub const STREAM_SEED_C: u64 = 0x5EED_0000_0000_000C;
pub const FFT_SEED: u64 = 0x5EED_0000_0000_0FF7;

/// Largest number of updates carried by one RandomAccess message.
pub const RA_MAX_BATCH: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub kernel: String,
    pub np: usize,
    pub size: usize,
    pub seconds: f64,
    /// bytes/s for stream and pingpong, Gflop/s for fft, updates/s for ra.
    pub metric: f64,
    pub correct: bool,
}

impl BenchResult {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.9},{:.6e},{}",
            self.kernel, self.np, self.size, self.seconds, self.metric, self.correct
        )
    }
}

impl fmt::Display for BenchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.csv_row())
    }
}

/// Writes results as CSV with a header line.
pub fn write_csv(mut w: impl Write, results: &[BenchResult]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in results {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_csv_file(path: &Path, results: &[BenchResult]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), results).map_err(|e| Error::io(path, e))
}

/// Whether a kernel uses distributed maps or runs with every map set to `1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MapMode {
    #[default]
    Mapped,
    Off,
}

impl MapMode {
    fn arg(self, map: impl FnOnce() -> Result<Map>) -> Result<MapArg> {
        match self {
            MapMode::Mapped => Ok(MapArg::Map(map()?)),
            MapMode::Off => Ok(MapArg::Scalar(1)),
        }
    }
}

/// Outcome of one kernel on one rank.
#[derive(Clone, Debug)]
pub struct KernelRun<T> {
    pub result: BenchResult,
    /// The assembled global result, on the leader only.
    pub output: Option<Vec<T>>,
    /// Messages carrying data issued by this rank.
    pub data_messages: usize,
    /// Messages carrying only control information (termination tokens).
    pub control_messages: usize,
}

/// Uniform value in `[0, 1)` determined by `(seed, i)` alone.
pub fn unit_value(seed: u64, i: u64) -> f64 {
    (splitmix64(seed ^ splitmix64(i)) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn all_procs(np: usize) -> Vec<usize> {
    (0..np).collect()
}

/// Gathers a few numbers from every rank onto rank 0.
fn gather_to_root(ctx: &mut CommContext, values: Vec<f64>) -> Result<Option<Vec<Vec<f64>>>> {
    let tag = ctx.next_collective_tag();
    if ctx.rank() != 0 {
        ctx.send_tagged(0, tag, &Payload::Dense(DenseArray::vector(values)))?;
        return Ok(None);
    }
    let mut all = vec![values];
    for r in 1..ctx.size() {
        let v = ctx
            .recv(r, tag)?
            .into_dense()
            .and_then(DenseArray::into_vec::<f64>)
            .ok_or_else(|| Error::Decode(format!("rank {r} sent a malformed gather block")))?;
        all.push(v);
    }
    Ok(Some(all))
}

/// Broadcasts the leader's verdict.
fn share_flag(ctx: &mut CommContext, root: usize, flag: Option<bool>) -> Result<bool> {
    let payload = flag.map(|f| Payload::Blob(vec![u8::from(f)]));
    match ctx.bcast(root, payload)? {
        Payload::Blob(b) if b.len() == 1 => Ok(b[0] == 1),
        _ => Err(Error::Decode("malformed verdict broadcast".into())),
    }
}

/// Broadcasts the leader's timing.
fn share_seconds(ctx: &mut CommContext, root: usize, seconds: Option<f64>) -> Result<f64> {
    let payload = seconds.map(|s| Payload::Dense(DenseArray::vector(vec![s])));
    ctx.bcast(root, payload)?
        .into_dense()
        .and_then(DenseArray::into_vec::<f64>)
        .and_then(|v| v.first().copied())
        .ok_or_else(|| Error::Decode("malformed timing broadcast".into()))
}

/// How to fill the STREAM inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StreamInit {
    Ones,
    /// `B[j]` and `C[j]` are [`unit_value`] draws keyed by the global index.
    Seeded,
}

impl StreamInit {
    fn values(self, j: usize) -> (f64, f64) {
        match self {
            StreamInit::Ones => (1.0, 1.0),
            StreamInit::Seeded => (unit_value(STREAM_SEED_B, j as u64), unit_value(STREAM_SEED_C, j as u64)),
        }
    }
}

/// Serial reference triad.
pub fn stream_oracle(n: usize, s: f64, init: StreamInit) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let (b, c) = init.values(j);
            b + s * c
        })
        .collect()
}

/// STREAM triad `A = B + s*C` on `1 x n` arrays under a `1 x np` block map.
///
/// `seconds` is the longest per-rank duration of the timed loop and the
/// metric is `3 * 8 * n * iters / seconds`.
pub fn stream_triad(
    ctx: &mut CommContext,
    n: usize,
    s: f64,
    iters: usize,
    init: StreamInit,
    mode: MapMode,
) -> Result<KernelRun<f64>> {
    let np = ctx.size();
    let rank = ctx.rank();
    if n < np && mode == MapMode::Mapped {
        return Err(Error::InvalidArgument(format!("stream needs n >= np, got n={n} np={np}")));
    }
    let map = mode.arg(|| Map::new(&[1, np], &[], &all_procs(np)))?;
    let shape = [1, n];
    let b = AnyArray::from_fn(&shape, &map, rank, |i| init.values(i[1]).0)?;
    let c = AnyArray::from_fn(&shape, &map, rank, |i| init.values(i[1]).1)?;
    let mut a = darray::zeros::<f64>(&shape, &map, rank)?;

    darray::synch(ctx)?;
    let start = Instant::now();
    for _ in 0..iters {
        ndarray::Zip::from(a.local_data_mut())
            .and(b.local_data())
            .and(c.local_data())
            .for_each(|a, &b, &c| *a = b + s * c);
    }
    let elapsed = start.elapsed().as_secs_f64();
    darray::synch(ctx)?;

    let seconds = gather_to_root(ctx, vec![elapsed])?.map(|all| all.iter().map(|v| v[0]).fold(0.0, f64::max));
    let seconds = share_seconds(ctx, 0, seconds)?;

    let full = darray::agg(ctx, &a)?;
    let (verdict, output) = if rank == 0 {
        let got: Vec<f64> = full.iter().copied().collect();
        let want = stream_oracle(n, s, init);
        let ok = got.len() == want.len() && got.iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits());
        (Some(ok), Some(got))
    } else {
        (None, None)
    };
    let correct = share_flag(ctx, 0, verdict)?;
    Ok(KernelRun {
        result: BenchResult {
            kernel: "stream".into(),
            np,
            size: n,
            seconds,
            metric: (3 * 8 * n * iters) as f64 / seconds,
            correct,
        },
        output,
        data_messages: 0,
        control_messages: 0,
    })
}

/// In-place iterative radix-2 FFT with the `exp(-2*pi*i/N)` kernel; `inverse`
/// uses the conjugate kernel and scales by `1/N`.
pub fn local_fft_in_place(x: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = x.len();
    if !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("fft length {n} is not a power of two")));
    }
    let bits = n.trailing_zeros();
    if bits == 0 {
        return Ok(());
    }
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            x.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Computed directly rather than by repeated products, which drift.
        let tw: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for chunk in x.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(half);
            for k in 0..half {
                let t = tw[k] * hi[k];
                hi[k] = lo[k] - t;
                lo[k] += t;
            }
        }
        len *= 2;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        x.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(())
}

pub fn local_fft(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let mut y = x.to_vec();
    local_fft_in_place(&mut y, inverse)?;
    Ok(y)
}

/// Four-step twiddle factors `W[p][q] = exp(-2*pi*i*p*q/(P*Q))`.
#[derive(Clone, Debug)]
pub struct TwiddleWeights {
    p: usize,
    q: usize,
}

impl TwiddleWeights {
    pub fn new(p: usize, q: usize) -> Self {
        TwiddleWeights { p, q }
    }

    pub fn get(&self, p: usize, q: usize) -> Complex64 {
        let n = (self.p * self.q) as f64;
        // Reduce p*q mod n first so the angle stays small and accurate.
        let k = (p * q) % (self.p * self.q);
        Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n)
    }

    /// Weights for the given global rows, as a `rows x Q` array.
    pub fn rows(&self, rows: &[Interval]) -> ndarray::Array2<Complex64> {
        let idx: Vec<usize> = crate::interval::indices(rows).collect();
        ndarray::Array2::from_shape_fn((idx.len(), self.q), |(r, q)| self.get(idx[r], q))
    }
}

/// Input vector of the parallel FFT benchmark.
pub fn fft_input(n: usize) -> Vec<Complex64> {
    (0..n as u64)
        .map(|k| Complex64::new(unit_value(FFT_SEED, 2 * k) - 0.5, unit_value(FFT_SEED, 2 * k + 1) - 0.5))
        .collect()
}

/// Relative L2 error of `got` against `want`.
pub fn relative_error(got: &[Complex64], want: &[Complex64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = want.iter().map(|b| b.norm_sqr()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn fft_rows(local: &mut ndarray::ArrayViewMutD<'_, Complex64>) -> Result<()> {
    for mut row in local.axis_iter_mut(Axis(0)) {
        match row.as_slice_mut() {
            Some(s) => local_fft_in_place(s, false)?,
            None => {
                let mut v: Vec<Complex64> = row.iter().copied().collect();
                local_fft_in_place(&mut v, false)?;
                row.iter_mut().zip(v).for_each(|(d, s)| *d = s);
            }
        }
    }
    Ok(())
}

fn fft_columns(local: &mut ndarray::ArrayViewMutD<'_, Complex64>) -> Result<()> {
    let mut buf = Vec::with_capacity(local.shape()[0]);
    for mut col in local.axis_iter_mut(Axis(1)) {
        buf.clear();
        buf.extend(col.iter().copied());
        local_fft_in_place(&mut buf, false)?;
        col.iter_mut().zip(&buf).for_each(|(d, s)| *d = *s);
    }
    Ok(())
}

/// Parallel 1-D FFT of length `n = p * q` by the four-step method.
///
/// Element `k = a + p*b` of the input sits at `X[a][b]` of a `p x q` matrix
/// distributed by rows (`np x 1` grid). Rows are transformed, multiplied by the
/// twiddle weights, corner-turned into a column distribution (`1 x np` grid)
/// and the columns transformed; output element `j = q*c + d` is then `Z[c][d]`.
pub fn parallel_fft_1d(
    ctx: &mut CommContext,
    p: usize,
    q: usize,
    mode: MapMode,
    twiddle: bool,
) -> Result<KernelRun<Complex64>> {
    if !p.is_power_of_two() || !q.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("fft factors must be powers of two, got {p} x {q}")));
    }
    let np = ctx.size();
    let rank = ctx.rank();
    let n = p * q;
    let input = fft_input(n);
    let xmap = mode.arg(|| Map::new(&[np, 1], &[], &all_procs(np)))?;
    let zmap = mode.arg(|| Map::new(&[1, np], &[], &all_procs(np)))?;
    let mut x = AnyArray::from_fn(&[p, q], &xmap, rank, |i| input[i[0] + p * i[1]])?;
    let mut z = darray::zeros::<Complex64>(&[p, q], &zmap, rank)?;
    let rows = darray::global_block_range(&x, rank)?.dims[0].clone();
    let weights = TwiddleWeights::new(p, q).rows(&rows);

    darray::synch(ctx)?;
    let start = Instant::now();
    {
        let mut local = x.local_data_mut();
        fft_rows(&mut local)?;
        if twiddle {
            let mut local2 = local.into_dimensionality::<ndarray::Ix2>().expect("two-dimensional");
            local2 *= &weights;
        }
    }
    let stats = darray::assign(ctx, &mut z, &x)?;
    fft_columns(&mut z.local_data_mut())?;
    darray::synch(ctx)?;
    let seconds = share_seconds(ctx, 0, (rank == 0).then(|| start.elapsed().as_secs_f64()))?;

    let full = darray::agg(ctx, &z)?;
    let (verdict, output) = if rank == 0 {
        let got: Vec<Complex64> = full.iter().copied().collect();
        let want = local_fft(&input, false)?;
        (Some(relative_error(&got, &want) <= 1e-6), Some(got))
    } else {
        (None, None)
    };
    let correct = share_flag(ctx, 0, verdict)?;
    let flops = 5.0 * n as f64 * (n as f64).log2();
    Ok(KernelRun {
        result: BenchResult {
            kernel: "fft".into(),
            np,
            size: n,
            seconds,
            metric: flops * 1e-9 / seconds,
            correct,
        },
        output,
        data_messages: stats.messages,
        control_messages: 0,
    })
}

/// Marsaglia xorshift64 with shifts (13, 7, 17).
#[derive(Clone, Debug)]
pub struct XorShift64(u64);

impl XorShift64 {
    pub const DEFAULT_SEED: u64 = 0x2545_F491_4F6C_DD1D;

    /// A zero seed would be a fixed point, so it is replaced by [`Self::DEFAULT_SEED`].
    pub fn new(seed: u64) -> Self {
        XorShift64(if seed == 0 { Self::DEFAULT_SEED } else { seed })
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }
}

impl Iterator for XorShift64 {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        Some(self.next_u64())
    }
}

/// Serial RandomAccess: `T[i] = i`, then `T[r & (2^m - 1)] ^= r` for the first `updates` stream values.
pub fn random_access_oracle(m: u32, updates: usize, seed: u64) -> Vec<u64> {
    let mask = (1u64 << m) - 1;
    let mut table: Vec<u64> = (0..=mask).collect();
    for r in XorShift64::new(seed).take(updates) {
        table[(r & mask) as usize] ^= r;
    }
    table
}

#[derive(Clone, Copy, Debug)]
pub struct RaParams {
    pub table_bits: u32,
    pub updates: usize,
    pub seed: u64,
    pub batch: usize,
}

impl RaParams {
    pub fn new(table_bits: u32, updates: usize) -> Self {
        RaParams {
            table_bits,
            updates,
            seed: XorShift64::DEFAULT_SEED,
            batch: RA_MAX_BATCH,
        }
    }
}

fn ra_message(done: bool, updates: Vec<u64>) -> Payload {
    Payload::Record(vec![
        ("done".into(), Payload::Blob(vec![u8::from(done)])),
        ("updates".into(), Payload::Dense(DenseArray::vector(updates))),
    ])
}

fn ra_unpack(p: Payload) -> Result<(bool, Vec<u64>)> {
    let done = match p.field("done") {
        Some(Payload::Blob(b)) if b.len() == 1 => b[0] == 1,
        _ => return Err(Error::Decode("update batch lacks its done flag".into())),
    };
    let updates = match p.field("updates") {
        Some(Payload::Dense(d)) => d.clone().into_vec::<u64>(),
        _ => None,
    }
    .ok_or_else(|| Error::Decode("update batch lacks its updates".into()))?;
    Ok((done, updates))
}

struct RaInbox {
    base: u64,
    next: Vec<u64>,
    done: Vec<bool>,
}

impl RaInbox {
    fn take(&mut self, ctx: &mut CommContext, src: usize, blocking: bool, apply: &mut impl FnMut(&[u64])) -> Result<()> {
        while !self.done[src] {
            let tag = self.base + self.next[src];
            if !blocking && !ctx.has_message(src, tag) {
                break;
            }
            let (done, updates) = ra_unpack(ctx.recv(src, tag)?)?;
            apply(&updates);
            self.next[src] += 1;
            self.done[src] = done;
        }
        Ok(())
    }
}

/// RandomAccess over a `2^m` table of `u64` block-distributed over all ranks.
///
/// Rank `r` generates its fair share of the shared xorshift stream (advancing
/// the generator past the earlier ranks' shares). Updates for other ranks are
/// batched and sent to the owner; each sender's last message to every peer
/// carries a done flag.
pub fn random_access(ctx: &mut CommContext, params: RaParams, mode: MapMode) -> Result<KernelRun<u64>> {
    let RaParams {
        table_bits: m,
        updates,
        seed,
        batch,
    } = params;
    if m >= usize::BITS || batch == 0 || batch > RA_MAX_BATCH {
        return Err(Error::InvalidArgument(format!(
            "need table bits < {} and batch in 1..={RA_MAX_BATCH}",
            usize::BITS
        )));
    }
    let np = ctx.size();
    let rank = ctx.rank();
    let size = 1usize << m;
    let mask = (size - 1) as u64;
    let map = mode.arg(|| Map::new(&[np], &[], &all_procs(np)))?;
    let mut table = AnyArray::from_fn(&[size], &map, rank, |i| i[0] as u64)?;
    let ranges: Vec<Interval> = darray::global_block_ranges(&table)
        .into_iter()
        .map(|(_, r)| r.dims[0].first().copied().unwrap_or(Interval { lo: size, hi: size }))
        .collect();
    let owner = |idx: usize| ranges.partition_point(|iv| iv.hi <= idx);
    let (mine_lo, first, count) = match mode {
        MapMode::Mapped => (ranges[rank].lo, fair_share_start(updates, np, rank), fair_share_sizes(updates, np)[rank]),
        MapMode::Off => (0, 0, updates),
    };
    let base = ctx.next_collective_tag();

    darray::synch(ctx)?;
    let start = Instant::now();
    let mut local = table.local_data_mut();
    let local = local.as_slice_mut().expect("contiguous table");
    let mut apply = |ups: &[u64]| {
        for &r in ups {
            local[(r & mask) as usize - mine_lo] ^= r;
        }
    };
    let mut data_messages = 0;
    let mut control_messages = 0;
    let mut outbox: Vec<Vec<u64>> = vec![Vec::new(); np];
    let mut sent = vec![0u64; np];
    let mut inbox = RaInbox {
        base,
        next: vec![0; np],
        done: (0..np).map(|r| r == rank || mode == MapMode::Off).collect(),
    };
    let mut stream = XorShift64::new(seed);
    for _ in 0..first {
        stream.next_u64();
    }
    for r in stream.take(count) {
        let dst = match mode {
            MapMode::Mapped => owner((r & mask) as usize),
            MapMode::Off => rank,
        };
        if dst == rank {
            apply(&[r]);
            continue;
        }
        outbox[dst].push(r);
        if outbox[dst].len() == batch {
            if sent[dst] + 1 >= COLLECTIVE_TAG_SPAN {
                return Err(Error::InvalidArgument("too many update batches for one tag block".into()));
            }
            ctx.send_tagged(dst, base + sent[dst], &ra_message(false, std::mem::take(&mut outbox[dst])))?;
            sent[dst] += 1;
            data_messages += 1;
            for src in 0..np {
                inbox.take(ctx, src, false, &mut apply)?;
            }
        }
    }
    if mode == MapMode::Mapped {
        for dst in (0..np).filter(|&d| d != rank) {
            let rest = std::mem::take(&mut outbox[dst]);
            if rest.is_empty() {
                control_messages += 1;
            } else {
                data_messages += 1;
            }
            ctx.send_tagged(dst, base + sent[dst], &ra_message(true, rest))?;
        }
    }
    for src in 0..np {
        inbox.take(ctx, src, true, &mut apply)?;
    }
    darray::synch(ctx)?;
    let seconds = share_seconds(ctx, 0, (rank == 0).then(|| start.elapsed().as_secs_f64()))?;

    let full = darray::agg(ctx, &table)?;
    let (verdict, output) = if rank == 0 {
        let got: Vec<u64> = full.iter().copied().collect();
        let ok = got == random_access_oracle(m, updates, seed);
        (Some(ok), Some(got))
    } else {
        (None, None)
    };
    let correct = share_flag(ctx, 0, verdict)?;
    Ok(KernelRun {
        result: BenchResult {
            kernel: "ra".into(),
            np,
            size,
            seconds,
            metric: updates as f64 / seconds,
            correct,
        },
        output,
        data_messages,
        control_messages,
    })
}

/// Message sizes of the ping-pong sweep: 8 bytes doubling up to `max_bytes`.
pub fn pingpong_sizes(max_bytes: usize) -> Vec<usize> {
    std::iter::successors(Some(8usize), |s| s.checked_mul(2))
        .take_while(|&s| s <= max_bytes)
        .collect()
}

fn median(v: &mut [Duration]) -> Duration {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Ping-pong between ranks 0 and 1. For each size, rank 0 sends a blob and
/// rank 1 echoes it back; latency is half the median round trip over `trials`
/// and bandwidth is size over latency. Results are returned on rank 0.
pub fn pingpong(ctx: &mut CommContext, max_bytes: usize, trials: usize) -> Result<Vec<BenchResult>> {
    if ctx.size() != 2 {
        return Err(Error::InvalidArgument(format!("pingpong needs exactly 2 ranks, got {}", ctx.size())));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("pingpong needs at least one trial".into()));
    }
    let sizes = pingpong_sizes(max_bytes);
    let mut results = Vec::new();
    for (si, &size) in sizes.iter().enumerate() {
        let blob: Vec<u8> = (0..size).map(|i| (splitmix64(i as u64) & 0xFF) as u8).collect();
        let mut rtts = Vec::with_capacity(trials);
        let mut intact = true;
        for t in 0..trials {
            let tag = ((si * trials + t) * 2) as u64;
            if ctx.rank() == 0 {
                let start = Instant::now();
                ctx.send(1, tag, &Payload::Blob(blob.clone()))?;
                let back = ctx.recv(1, tag + 1)?;
                rtts.push(start.elapsed());
                intact &= matches!(&back, Payload::Blob(b) if *b == blob);
            } else {
                let got = ctx.recv(0, tag)?;
                ctx.send(0, tag + 1, &got)?;
            }
        }
        if ctx.rank() == 0 {
            let latency = median(&mut rtts).as_secs_f64() / 2.0;
            results.push(BenchResult {
                kernel: "pingpong".into(),
                np: 2,
                size,
                seconds: latency,
                metric: size as f64 / latency,
                correct: intact,
            });
        }
    }
    Ok(results)
}

/// Draws a map over some of the ranks `0..np` for an array of `ndims` dimensions.
pub fn random_map(rng: &mut impl Rng, ndims: usize, np: usize) -> Map {
    let mut grid = vec![1; ndims];
    let mut budget = np;
    for g in grid.iter_mut() {
        *g = rng.gen_range(1..=budget);
        budget /= *g;
    }
    grid.shuffle(rng);
    let needed: usize = grid.iter().product();
    let mut procs: Vec<usize> = (0..np).collect();
    procs.shuffle(rng);
    procs.truncate(needed);
    let dists: Vec<DistSpec> = (0..ndims)
        .map(|_| match rng.gen_range(0..5) {
            0 => DistSpec::Block,
            1 => DistSpec::Cyclic,
            k => DistSpec::BlockCyclic(k - 1),
        })
        .collect();
    let overlap: Vec<usize> = (0..ndims)
        .map(|_| if rng.gen_bool(0.3) { rng.gen_range(1..=2) } else { 0 })
        .collect();
    let order = if rng.gen_bool(0.5) { Order::RowMajor } else { Order::ColMajor };
    Map::new(&grid, &dists, &procs)
        .and_then(|m| m.with_overlap(&overlap))
        .expect("generated map is valid")
        .with_order(order)
}

/// A random array shape (1 to 3 dimensions, extents 1 to 12) with source and destination maps.
pub fn random_case(rng: &mut impl Rng, np: usize) -> (Vec<usize>, Map, Map) {
    let ndims = rng.gen_range(1..=3);
    let shape = (0..ndims).map(|_| rng.gen_range(1..=12)).collect();
    let src = random_map(rng, ndims, np);
    let dst = random_map(rng, ndims, np);
    (shape, src, dst)
}

/// Redistributes `cases` random arrays `A -> B -> A'` and checks that every
/// rank's local part of `A'` is bitwise equal to `A` and that `B` and `A`
/// aggregate to the same global array. The same seed gives the same cases on
/// every rank.
pub fn redist_round_trip(ctx: &mut CommContext, cases: usize, seed: u64) -> Result<(BenchResult, Vec<String>)> {
    let np = ctx.size();
    let rank = ctx.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    darray::synch(ctx)?;
    let start = Instant::now();
    for case in 0..cases {
        let (shape, src, dst) = random_case(&mut rng, np);
        let strides: Vec<usize> = (0..shape.len()).map(|d| shape[d + 1..].iter().product()).collect();
        let value = |i: &[usize]| unit_value(seed ^ case as u64, i.iter().zip(&strides).map(|(a, b)| a * b).sum::<usize>() as u64);
        let a = DArray::from_fn(&shape, &src, rank, value)?;
        let mut b = DArray::filled(&shape, &dst, rank, f64::NAN)?;
        darray::assign_redistribute(ctx, &mut b, &a)?;
        let mut back = DArray::filled(&shape, &src, rank, f64::NAN)?;
        darray::assign_redistribute(ctx, &mut back, &b)?;
        let local_ok = a.local().shape() == back.local().shape()
            && a.local().iter().zip(back.local().iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        let ga = darray::agg_all(ctx, &AnyArray::Dist(a))?;
        let gb = darray::agg_all(ctx, &AnyArray::Dist(b))?;
        let agg_ok = ga.iter().zip(gb.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        let flags = gather_to_root(ctx, vec![f64::from(u8::from(local_ok)), f64::from(u8::from(agg_ok))])?;
        if let Some(all) = flags {
            let bad: Vec<usize> = (0..np).filter(|&r| all[r].iter().any(|&f| f != 1.0)).collect();
            if !bad.is_empty() {
                failures.push(format!("case {case}: shape {shape:?} src {src} dst {dst}: ranks {bad:?} differ"));
            }
        }
    }
    darray::synch(ctx)?;
    let seconds = start.elapsed().as_secs_f64();
    let correct = share_flag(ctx, 0, (rank == 0).then_some(failures.is_empty()))?;
    Ok((
        BenchResult {
            kernel: "redist".into(),
            np,
            size: cases,
            seconds,
            metric: cases as f64 / seconds,
            correct,
        },
        failures,
    ))
}
