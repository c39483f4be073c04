//! File-based, one-sided point-to-point messaging over a shared directory.
//!
//! A message from `src` to `dst` with tag `t` is the pair of files
//! `msg_s<src>_d<dst>_t<t>.bin` (payload) and `msg_s<src>_d<dst>_t<t>.ready`
//! (empty marker) in the job's communication directory. The sender writes the
//! payload under a temporary name in its private scratch directory, renames it
//! into place and only then publishes the marker the same way, so a receiver
//! that sees the marker always sees a complete payload.
//!
//! Messages live in `$DGRID_COMMDIR/$DGRID_JOBID/`.

pub mod payload;

use std::env;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use log::warn;

use crate::error::{Error, Result};
pub use payload::{ArrayData, DenseArray, ElemType, Payload, PayloadKind};

pub const ENV_RANK: &str = "DGRID_RANK";
pub const ENV_SIZE: &str = "DGRID_SIZE";
pub const ENV_COMMDIR: &str = "DGRID_COMMDIR";
pub const ENV_JOBID: &str = "DGRID_JOBID";
pub const ENV_RECV_TIMEOUT_MS: &str = "DGRID_RECV_TIMEOUT_MS";
pub const ENV_KEEP_MSGS: &str = "DGRID_KEEP_MSGS";

/// Tags at or above this value belong to collectives and are refused by [`CommContext::send`].
pub const RESERVED_TAG_BASE: u64 = 1 << 62;
/// Number of sub-tags available to one collective operation.
pub const COLLECTIVE_TAG_SPAN: u64 = 1 << 24;

const POLL_FLOOR: Duration = Duration::from_millis(1);
const POLL_CAP: Duration = Duration::from_millis(100);

#[derive(Clone, Debug, Default)]
pub struct CommConfig {
    /// `None` waits forever.
    pub recv_timeout: Option<Duration>,
    /// Retain consumed messages under `kept/` instead of deleting them.
    pub keep_msgs: bool,
}

/// Counters for traffic issued through one context.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CommStats {
    pub sends: u64,
    pub recvs: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// One rank's view of the communicator.
///
/// Not meant to be shared between threads; every rank owns exactly one.
#[derive(Debug)]
pub struct CommContext {
    rank: usize,
    size: usize,
    job_id: String,
    dir: PathBuf,
    scratch: PathBuf,
    config: CommConfig,
    collective_seq: u64,
    stats: CommStats,
    finalized: bool,
}

impl CommContext {
    /// Builds a context from the `DGRID_*` process environment.
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|name| env::var(name).ok())
    }

    /// Builds a context from an arbitrary variable lookup (used by [`Self::from_env`]).
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn required(lookup: &impl Fn(&str) -> Option<String>, var: &'static str) -> Result<String> {
            match lookup(var) {
                Some(v) if !v.trim().is_empty() => Ok(v),
                _ => Err(Error::Init {
                    var,
                    reason: "not set".into(),
                }),
            }
        }
        fn parse_num<T: std::str::FromStr>(var: &'static str, raw: &str) -> Result<T> {
            raw.trim().parse().map_err(|_| Error::Init {
                var,
                reason: format!("{raw:?} is not a non-negative integer"),
            })
        }

        let rank: usize = parse_num(ENV_RANK, &required(&lookup, ENV_RANK)?)?;
        let size: usize = parse_num(ENV_SIZE, &required(&lookup, ENV_SIZE)?)?;
        if size == 0 {
            return Err(Error::Init {
                var: ENV_SIZE,
                reason: "must be at least 1".into(),
            });
        }
        if rank >= size {
            return Err(Error::Init {
                var: ENV_RANK,
                reason: format!("rank {rank} out of range for size {size}"),
            });
        }
        let comm_dir = PathBuf::from(required(&lookup, ENV_COMMDIR)?);
        let job_id = required(&lookup, ENV_JOBID)?;
        let recv_timeout = match lookup(ENV_RECV_TIMEOUT_MS) {
            Some(raw) if !raw.trim().is_empty() => {
                Some(Duration::from_millis(parse_num(ENV_RECV_TIMEOUT_MS, &raw)?))
            }
            _ => None,
        };
        let keep_msgs = lookup(ENV_KEEP_MSGS).is_some_and(|v| v.trim() == "1");
        Self::new(
            rank,
            size,
            &comm_dir,
            &job_id,
            CommConfig {
                recv_timeout,
                keep_msgs,
            },
        )
    }

    /// Opens (creating if needed) the job directory `comm_dir/job_id` and this rank's scratch area.
    ///
    /// `comm_dir` itself must already exist. Calling this again with the same
    /// arguments yields an equivalent context.
    pub fn new(rank: usize, size: usize, comm_dir: &Path, job_id: &str, config: CommConfig) -> Result<Self> {
        if size == 0 || rank >= size {
            return Err(Error::RankOutOfRange { rank, size });
        }
        if job_id.is_empty() || job_id.contains(['/', '\\']) {
            return Err(Error::Init {
                var: ENV_JOBID,
                reason: format!("{job_id:?} is not a valid directory name"),
            });
        }
        let meta = fs::metadata(comm_dir).map_err(|e| Error::io(comm_dir, e))?;
        if !meta.is_dir() {
            return Err(Error::io(
                comm_dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            ));
        }
        let dir = comm_dir.join(job_id);
        let scratch = dir.join(format!(".scratch-r{rank}"));
        fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
        Ok(CommContext {
            rank,
            size,
            job_id: job_id.to_string(),
            dir,
            scratch,
            config,
            collective_seq: 0,
            stats: CommStats::default(),
            finalized: false,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn job_id(&self) -> &str {
        &self.job_id
    }

    /// Directory holding this job's message files.
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &CommConfig {
        &self.config
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }

    /// Posts a message without waiting for the receiver.
    pub fn send(&mut self, dst: usize, tag: u64, payload: &Payload) -> Result<()> {
        if tag >= RESERVED_TAG_BASE {
            return Err(Error::Protocol(format!("tag {tag} is in the reserved collective range")));
        }
        self.send_tagged(dst, tag, payload)
    }

    /// Send without the reserved-range check; used by collectives.
    pub(crate) fn send_tagged(&mut self, dst: usize, tag: u64, payload: &Payload) -> Result<()> {
        self.check_rank(dst)?;
        let name = message_name(self.rank, dst, tag);
        let bin = self.dir.join(format!("{name}.bin"));
        let ready = self.dir.join(format!("{name}.ready"));
        if ready.exists() || bin.exists() {
            return Err(Error::Protocol(format!(
                "message {name} is still in flight; a (src, dst, tag) triple cannot be reused before it is received"
            )));
        }

        let tmp = self.scratch.join(format!("{name}.bin.tmp"));
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::with_capacity(1 << 20, file);
        payload
            .write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        fs::rename(&tmp, &bin).map_err(|e| Error::io(&bin, e))?;

        let tmp_marker = self.scratch.join(format!("{name}.ready.tmp"));
        File::create(&tmp_marker).map_err(|e| Error::io(&tmp_marker, e))?;
        fs::rename(&tmp_marker, &ready).map_err(|e| Error::io(&ready, e))?;

        self.stats.sends += 1;
        self.stats.bytes_sent += payload.encoded_len() as u64;
        Ok(())
    }

    /// Blocks until the message `(src, self.rank, tag)` is published, then consumes it.
    pub fn recv(&mut self, src: usize, tag: u64) -> Result<Payload> {
        self.check_rank(src)?;
        let name = message_name(src, self.rank, tag);
        let bin = self.dir.join(format!("{name}.bin"));
        let ready = self.dir.join(format!("{name}.ready"));

        let start = Instant::now();
        let mut delay = POLL_FLOOR;
        while !ready.exists() {
            if let Some(limit) = self.config.recv_timeout {
                let waited = start.elapsed();
                if waited >= limit {
                    return Err(Error::Timeout { src, tag, waited });
                }
                thread::sleep(delay.min(limit - waited));
            } else {
                thread::sleep(delay);
            }
            delay = (delay * 2).min(POLL_CAP);
        }

        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let payload = Payload::decode(&bytes).map_err(|reason| Error::Format {
            path: bin.clone(),
            reason,
        })?;

        if self.config.keep_msgs {
            let kept = self.dir.join("kept");
            fs::create_dir_all(&kept).map_err(|e| Error::io(&kept, e))?;
            let target = (0u64..)
                .map(|n| kept.join(format!("{name}.{n}.bin")))
                .find(|p| !p.exists())
                .expect("unbounded search");
            fs::rename(&bin, &target).map_err(|e| Error::io(&bin, e))?;
        } else {
            fs::remove_file(&bin).map_err(|e| Error::io(&bin, e))?;
        }
        fs::remove_file(&ready).map_err(|e| Error::io(&ready, e))?;

        self.stats.recvs += 1;
        self.stats.bytes_received += bytes.len() as u64;
        Ok(payload)
    }

    /// True when a message `(src, self.rank, tag)` is ready to be received.
    pub fn has_message(&self, src: usize, tag: u64) -> bool {
        self.dir
            .join(format!("{}.ready", message_name(src, self.rank, tag)))
            .exists()
    }

    /// Non-blocking scan of published messages addressed to this rank.
    ///
    /// `None` matches any source or tag. Results are sorted by `(src, tag)`.
    pub fn probe(&self, src: Option<usize>, tag: Option<u64>) -> Result<Vec<(usize, u64)>> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut found = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let name = entry.file_name();
            let Some((s, d, t)) = name.to_str().and_then(parse_ready_name) else {
                continue;
            };
            if d == self.rank && src.is_none_or(|x| x == s) && tag.is_none_or(|x| x == t) {
                found.push((s, t));
            }
        }
        found.sort_unstable();
        Ok(found)
    }

    /// Root sends its payload to every other rank; everybody returns the root's payload.
    pub fn bcast(&mut self, root: usize, payload: Option<Payload>) -> Result<Payload> {
        self.check_rank(root)?;
        let tag = self.next_collective_tag();
        self.bcast_tagged(root, tag, payload)
    }

    pub(crate) fn bcast_tagged(&mut self, root: usize, tag: u64, payload: Option<Payload>) -> Result<Payload> {
        if self.rank == root {
            let payload = payload
                .ok_or_else(|| Error::InvalidArgument("broadcast root must supply a payload".into()))?;
            for dst in (0..self.size).filter(|&r| r != root) {
                self.send_tagged(dst, tag, &payload)?;
            }
            Ok(payload)
        } else {
            self.recv(root, tag)
        }
    }

    /// Allocates the tag block of the next collective operation.
    ///
    /// Every rank must run the same sequence of collectives so that the
    /// counters agree. Sub-tags `tag..tag + COLLECTIVE_TAG_SPAN` belong to it.
    pub fn next_collective_tag(&mut self) -> u64 {
        let tag = RESERVED_TAG_BASE + self.collective_seq * COLLECTIVE_TAG_SPAN;
        self.collective_seq += 1;
        tag
    }

    /// Removes this rank's scratch area and deposits a finalize marker.
    ///
    /// Rank 0 then waits for every marker and sweeps the job directory of
    /// message and marker files. I/O problems are logged, not returned.
    /// Calling it again is a no-op.
    pub fn finalize(&mut self) -> Result<()> {
        if self.finalized {
            return Ok(());
        }
        self.finalized = true;
        if let Err(e) = fs::remove_dir_all(&self.scratch) {
            warn!("rank {}: removing {}: {e}", self.rank, self.scratch.display());
        }
        let marker = self.dir.join(finalize_name(self.rank));
        if let Err(e) = File::create(&marker) {
            warn!("rank {}: writing {}: {e}", self.rank, marker.display());
        }
        if self.rank != 0 {
            return Ok(());
        }

        let start = Instant::now();
        let mut delay = POLL_FLOOR;
        loop {
            let missing = (0..self.size).any(|r| !self.dir.join(finalize_name(r)).exists());
            if !missing {
                break;
            }
            if self.config.recv_timeout.is_some_and(|limit| start.elapsed() >= limit) {
                warn!("finalize: not every rank finalized; sweeping anyway");
                break;
            }
            thread::sleep(delay);
            delay = (delay * 2).min(POLL_CAP);
        }
        self.sweep();
        Ok(())
    }

    fn sweep(&self) {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) => {
                warn!("finalize: listing {}: {e}", self.dir.display());
                return;
            }
        };
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let is_marker = name.starts_with("fin_r");
            let is_message = name.starts_with("msg_");
            if is_marker || (is_message && !self.config.keep_msgs) {
                if let Err(e) = fs::remove_file(entry.path()) {
                    warn!("finalize: removing {}: {e}", entry.path().display());
                }
            }
        }
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank >= self.size {
            Err(Error::RankOutOfRange { rank, size: self.size })
        } else {
            Ok(())
        }
    }
}

fn message_name(src: usize, dst: usize, tag: u64) -> String {
    format!("msg_s{src}_d{dst}_t{tag}")
}

fn finalize_name(rank: usize) -> String {
    format!("fin_r{rank}.marker")
}

fn parse_ready_name(name: &str) -> Option<(usize, usize, u64)> {
    let body = name.strip_prefix("msg_s")?.strip_suffix(".ready")?;
    let (src, rest) = body.split_once("_d")?;
    let (dst, tag) = rest.split_once("_t")?;
    Some((src.parse().ok()?, dst.parse().ok()?, tag.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn vars(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn init_from_variables() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_str().unwrap();
        let ctx = CommContext::from_lookup(vars(&[
            (ENV_RANK, "3"),
            (ENV_SIZE, "4"),
            (ENV_COMMDIR, dir),
            (ENV_JOBID, "j1"),
        ]))
        .unwrap();
        assert_eq!((ctx.rank(), ctx.size()), (3, 4));
        assert!(ctx.dir().join(".scratch-r3").is_dir());

        let again = CommContext::from_lookup(vars(&[
            (ENV_RANK, "3"),
            (ENV_SIZE, "4"),
            (ENV_COMMDIR, dir),
            (ENV_JOBID, "j1"),
        ]))
        .unwrap();
        assert_eq!((again.rank(), again.size()), (3, 4));
    }

    #[test]
    fn init_errors_name_the_variable() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_str().unwrap();
        let err = CommContext::from_lookup(vars(&[
            (ENV_RANK, "4"),
            (ENV_SIZE, "4"),
            (ENV_COMMDIR, dir),
            (ENV_JOBID, "j"),
        ]))
        .unwrap_err();
        assert!(matches!(err, Error::Init { var: ENV_RANK, .. }), "{err}");

        let err = CommContext::from_lookup(vars(&[(ENV_RANK, "0"), (ENV_COMMDIR, dir), (ENV_JOBID, "j")])).unwrap_err();
        assert!(matches!(err, Error::Init { var: ENV_SIZE, .. }), "{err}");

        let err = CommContext::from_lookup(vars(&[(ENV_RANK, "0"), (ENV_SIZE, "1"), (ENV_JOBID, "j")])).unwrap_err();
        assert!(matches!(err, Error::Init { var: ENV_COMMDIR, .. }), "{err}");

        let err = CommContext::from_lookup(vars(&[
            (ENV_RANK, "0"),
            (ENV_SIZE, "1"),
            (ENV_COMMDIR, dir),
            (ENV_JOBID, "j"),
            (ENV_RECV_TIMEOUT_MS, "soon"),
        ]))
        .unwrap_err();
        assert!(matches!(err, Error::Init { var: ENV_RECV_TIMEOUT_MS, .. }), "{err}");

        let err = CommContext::from_lookup(vars(&[
            (ENV_RANK, "0"),
            (ENV_SIZE, "1"),
            (ENV_COMMDIR, "/nonexistent/dgrid/dir"),
            (ENV_JOBID, "j"),
        ]))
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn ready_name_parsing() {
        assert_eq!(parse_ready_name("msg_s1_d0_t7.ready"), Some((1, 0, 7)));
        assert_eq!(parse_ready_name("msg_s1_d0_t7.bin"), None);
        assert_eq!(parse_ready_name("fin_r0.marker"), None);
    }

    #[test]
    fn self_send_and_probe() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ctx = CommContext::new(0, 1, tmp.path(), "j", CommConfig::default()).unwrap();
        assert!(ctx.probe(None, None).unwrap().is_empty());
        let p = Payload::Dense(DenseArray::vector(vec![1.0f64, 2.0, 3.0]));
        ctx.send(0, 7, &p).unwrap();
        assert_eq!(ctx.probe(None, None).unwrap(), vec![(0, 7)]);
        assert!(matches!(ctx.send(0, 7, &p), Err(Error::Protocol(_))));
        assert_eq!(ctx.recv(0, 7).unwrap(), p);
        ctx.send(0, 7, &p).unwrap();
        assert_eq!(ctx.recv(0, 7).unwrap(), p);
        assert!(matches!(ctx.send(1, 0, &p), Err(Error::RankOutOfRange { rank: 1, size: 1 })));
        assert!(matches!(ctx.send(0, RESERVED_TAG_BASE, &p), Err(Error::Protocol(_))));
        assert_eq!(ctx.bcast(0, Some(p.clone())).unwrap(), p);
    }

    #[test]
    fn timeout_and_corrupt_payload() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = CommConfig {
            recv_timeout: Some(Duration::from_millis(20)),
            keep_msgs: false,
        };
        let mut ctx = CommContext::new(0, 1, tmp.path(), "j", cfg).unwrap();
        assert!(matches!(ctx.recv(0, 1), Err(Error::Timeout { src: 0, tag: 1, .. })));

        fs::write(ctx.dir().join("msg_s0_d0_t2.bin"), b"garbage").unwrap();
        fs::write(ctx.dir().join("msg_s0_d0_t2.ready"), b"").unwrap();
        assert!(matches!(ctx.recv(0, 2), Err(Error::Format { .. })));
        assert!(ctx.dir().join("msg_s0_d0_t2.bin").exists());
        assert!(ctx.dir().join("msg_s0_d0_t2.ready").exists());
    }

    #[test]
    fn keep_mode_retains_payloads() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = CommConfig {
            recv_timeout: None,
            keep_msgs: true,
        };
        let mut ctx = CommContext::new(0, 1, tmp.path(), "j", cfg).unwrap();
        let p = Payload::Blob(b"inspect me".to_vec());
        ctx.send(0, 3, &p).unwrap();
        ctx.recv(0, 3).unwrap();
        ctx.send(0, 3, &p).unwrap();
        ctx.recv(0, 3).unwrap();
        let kept: Vec<_> = fs::read_dir(ctx.dir().join("kept")).unwrap().collect();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn finalize_single_rank_cleans_up() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ctx = CommContext::new(0, 1, tmp.path(), "j", CommConfig::default()).unwrap();
        ctx.send(0, 1, &Payload::empty()).unwrap();
        ctx.finalize().unwrap();
        assert_eq!(fs::read_dir(ctx.dir()).unwrap().count(), 0);
        ctx.finalize().unwrap();
    }
}
