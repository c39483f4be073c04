//! SPMD launcher: spawns N copies of a program, each told its rank through
//! environment variables, and collects their exit codes.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::fsmpi::{
    CommConfig, CommContext, ENV_COMMDIR, ENV_JOBID, ENV_KEEP_MSGS, ENV_RANK, ENV_RECV_TIMEOUT_MS, ENV_SIZE,
};

/// Remote-shell template used when hosts are given. `{host}` and `{cmd}` are
/// substituted after splitting on whitespace, so `{cmd}` stays one argument.
pub const DEFAULT_RSH: &str = "ssh {host} {cmd}";

const WAIT_TICK: Duration = Duration::from_millis(5);

#[derive(Clone, Debug)]
pub struct LaunchSpec {
    pub np: usize,
    pub program: String,
    pub args: Vec<String>,
    pub comm_dir: PathBuf,
    /// Ranks are placed on these hosts round-robin; empty means all local.
    pub hosts: Vec<String>,
    pub keep_msgs: bool,
    pub timeout: Option<Duration>,
    /// Forwarded to the ranks as their receive timeout.
    pub recv_timeout: Option<Duration>,
    pub rsh: String,
    /// Send rank 0's output to `rank0.out` as well instead of the terminal.
    pub capture_rank0: bool,
    pub env: Vec<(String, String)>,
}

impl LaunchSpec {
    pub fn new(np: usize, program: impl Into<String>) -> Self {
        LaunchSpec {
            np,
            program: program.into(),
            args: Vec::new(),
            comm_dir: std::env::temp_dir().join("dgrid"),
            hosts: Vec::new(),
            keep_msgs: false,
            timeout: None,
            recv_timeout: None,
            rsh: DEFAULT_RSH.to_string(),
            capture_rank0: false,
            env: Vec::new(),
        }
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn comm_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.comm_dir = dir.into();
        self
    }

    fn host_of(&self, rank: usize) -> Option<&str> {
        (!self.hosts.is_empty()).then(|| self.hosts[rank % self.hosts.len()].as_str())
    }

    fn rank_env(&self, rank: usize, job_id: &str) -> Vec<(String, String)> {
        let mut env = vec![
            (ENV_RANK.to_string(), rank.to_string()),
            (ENV_SIZE.to_string(), self.np.to_string()),
            (ENV_COMMDIR.to_string(), self.comm_dir.display().to_string()),
            (ENV_JOBID.to_string(), job_id.to_string()),
        ];
        if let Some(t) = self.recv_timeout {
            env.push((ENV_RECV_TIMEOUT_MS.to_string(), t.as_millis().to_string()));
        }
        if self.keep_msgs {
            env.push((ENV_KEEP_MSGS.to_string(), "1".to_string()));
        }
        env.extend(self.env.iter().cloned());
        env
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankExit {
    pub rank: usize,
    /// `None` when the process ended by signal or was killed by the launcher.
    pub code: Option<i32>,
    pub killed: bool,
}

impl RankExit {
    pub fn success(&self) -> bool {
        self.code == Some(0)
    }
}

#[derive(Clone, Debug)]
pub struct ExitReport {
    pub job_id: String,
    pub job_dir: PathBuf,
    pub ranks: Vec<RankExit>,
    pub wall: Duration,
    pub timed_out: bool,
    pub aborted: bool,
}

impl ExitReport {
    pub fn success(&self) -> bool {
        !self.timed_out && !self.aborted && self.ranks.iter().all(RankExit::success)
    }

    /// Process exit code for the launcher: 0 iff every rank exited 0.
    pub fn exit_code(&self) -> i32 {
        if self.success() {
            return 0;
        }
        self.ranks
            .iter()
            .filter_map(|r| r.code)
            .find(|&c| c != 0)
            .unwrap_or(1)
    }

    pub fn failed_ranks(&self) -> Vec<usize> {
        self.ranks.iter().filter(|r| !r.success()).map(|r| r.rank).collect()
    }

    pub fn summary(&self) -> String {
        let mut s = format!("job {} finished in {:.3}s", self.job_id, self.wall.as_secs_f64());
        if self.timed_out {
            s.push_str(", timed out");
        }
        if self.aborted {
            s.push_str(", aborted");
        }
        for r in self.ranks.iter().filter(|r| !r.success()) {
            let _ = match r.code {
                Some(c) => write!(s, "; rank {} exited {}", r.rank, c),
                None if r.killed => write!(s, "; rank {} killed", r.rank),
                None => write!(s, "; rank {} died by signal", r.rank),
            };
        }
        s
    }
}

/// Fresh job identifier: UTC timestamp, launcher pid and a random suffix.
pub fn new_job_id() -> String {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!(
        "{}{:03}-{}-{:08x}",
        now.as_secs(),
        now.subsec_millis(),
        std::process::id(),
        rand::random::<u32>()
    )
}

/// Looks `program` up the way a shell would: paths are checked directly, bare names against `PATH`.
pub fn resolve_program(program: &str) -> Option<PathBuf> {
    let is_exec = |p: &Path| {
        p.metadata().is_ok_and(|m| {
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                m.is_file() && m.permissions().mode() & 0o111 != 0
            }
            #[cfg(not(unix))]
            {
                m.is_file()
            }
        })
    };
    if program.contains(std::path::MAIN_SEPARATOR) {
        let p = PathBuf::from(program);
        return is_exec(&p).then_some(p);
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|p| is_exec(p))
    })
}

/// Quotes a word for a POSIX shell.
pub fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_./=:,+@%".contains(&b)) {
        return s.to_string();
    }
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn remote_command(spec: &LaunchSpec, host: &str, env: &[(String, String)]) -> Result<Command> {
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    let mut cmd = format!("cd {} && env", shell_quote(&cwd.display().to_string()));
    for (k, v) in env {
        let _ = write!(cmd, " {}={}", k, shell_quote(v));
    }
    for word in std::iter::once(&spec.program).chain(&spec.args) {
        let _ = write!(cmd, " {}", shell_quote(word));
    }
    let argv: Vec<String> = spec
        .rsh
        .split_whitespace()
        .map(|w| w.replace("{host}", host).replace("{cmd}", &cmd))
        .collect();
    let (head, rest) = argv
        .split_first()
        .ok_or_else(|| Error::Launch("remote-shell template is empty".into()))?;
    let mut c = Command::new(head);
    c.args(rest);
    Ok(c)
}

fn spawn_rank(spec: &LaunchSpec, rank: usize, job_id: &str, job_dir: &Path) -> Result<Child> {
    let env = spec.rank_env(rank, job_id);
    let mut cmd = match spec.host_of(rank) {
        Some(host) => remote_command(spec, host, &env)?,
        None => {
            let mut c = Command::new(&spec.program);
            c.args(&spec.args).envs(env.iter().map(|(k, v)| (k, v)));
            c
        }
    };
    cmd.stdin(Stdio::null());
    if rank > 0 || spec.capture_rank0 {
        let path = job_dir.join(format!("rank{rank}.out"));
        let out = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let err = out.try_clone().map_err(|e| Error::io(&path, e))?;
        cmd.stdout(out).stderr(err);
    }
    cmd.spawn()
        .map_err(|e| Error::Launch(format!("cannot spawn rank {rank} ({}): {e}", spec.program)))
}

fn kill_all(children: &mut [Option<Child>], exits: &mut [Option<RankExit>]) {
    for (rank, slot) in children.iter_mut().enumerate() {
        if let Some(mut child) = slot.take() {
            let _ = child.kill();
            let status = child.wait().ok();
            exits[rank] = Some(RankExit {
                rank,
                code: status.and_then(|s| s.code()),
                killed: true,
            });
        }
    }
}

/// Runs the job to completion. See [`prun_with_abort`].
pub fn prun(spec: &LaunchSpec) -> Result<ExitReport> {
    prun_with_abort(spec, &AtomicBool::new(false))
}

/// Runs the job, killing every rank as soon as `abort` is set, one rank fails or the timeout passes.
pub fn prun_with_abort(spec: &LaunchSpec, abort: &AtomicBool) -> Result<ExitReport> {
    if spec.np == 0 {
        return Err(Error::Launch("need at least one rank".into()));
    }
    if spec.hosts.is_empty() && resolve_program(&spec.program).is_none() {
        return Err(Error::Launch(format!("program not found or not executable: {}", spec.program)));
    }
    fs::create_dir_all(&spec.comm_dir).map_err(|e| Error::io(&spec.comm_dir, e))?;
    let job_id = new_job_id();
    let job_dir = spec.comm_dir.join(&job_id);
    fs::create_dir(&job_dir).map_err(|e| Error::io(&job_dir, e))?;
    info!("job {job_id}: launching {} ranks of {}", spec.np, spec.program);

    let start = Instant::now();
    let mut children: Vec<Option<Child>> = Vec::with_capacity(spec.np);
    let mut exits: Vec<Option<RankExit>> = vec![None; spec.np];
    for rank in 0..spec.np {
        match spawn_rank(spec, rank, &job_id, &job_dir) {
            Ok(child) => children.push(Some(child)),
            Err(e) => {
                kill_all(&mut children, &mut exits);
                return Err(e);
            }
        }
    }

    let mut timed_out = false;
    let mut aborted = false;
    loop {
        let mut running = 0;
        let mut failed = false;
        for (rank, slot) in children.iter_mut().enumerate() {
            let Some(child) = slot else { continue };
            match child.try_wait() {
                Ok(Some(status)) => {
                    debug!("rank {rank} exited with {status}");
                    failed |= !status.success();
                    exits[rank] = Some(RankExit {
                        rank,
                        code: status.code(),
                        killed: false,
                    });
                    *slot = None;
                }
                Ok(None) => running += 1,
                Err(e) => warn!("cannot poll rank {rank}: {e}"),
            }
        }
        if running == 0 {
            break;
        }
        if failed {
            warn!("a rank failed; stopping the remaining {running}");
            kill_all(&mut children, &mut exits);
            break;
        }
        if spec.timeout.is_some_and(|t| start.elapsed() >= t) {
            timed_out = true;
            kill_all(&mut children, &mut exits);
            break;
        }
        if abort.load(Ordering::SeqCst) {
            aborted = true;
            kill_all(&mut children, &mut exits);
            break;
        }
        std::thread::sleep(WAIT_TICK);
    }

    let report = ExitReport {
        job_id,
        job_dir: job_dir.clone(),
        ranks: exits.into_iter().map(|e| e.expect("every rank reaped")).collect(),
        wall: start.elapsed(),
        timed_out,
        aborted,
    };
    if report.success() && !spec.keep_msgs {
        fs::remove_dir_all(&job_dir).map_err(|e| Error::io(&job_dir, e))?;
    }
    Ok(report)
}

/// Batch script for a scheduler that re-invokes `dgrid-run` on the allocated nodes.
/// Only `slurm` is known. The script is returned, never submitted.
pub fn emit_scheduler_script(spec: &LaunchSpec, flavor: &str) -> Result<String> {
    if flavor != "slurm" {
        return Err(Error::InvalidArgument(format!("unknown scheduler flavor {flavor:?}")));
    }
    let nodes = spec.hosts.len().max(1).min(spec.np.max(1));
    let per_node = spec.np.div_ceil(nodes);
    let mut s = String::from("#!/bin/bash\n");
    let _ = writeln!(s, "#SBATCH --job-name=dgrid");
    let _ = writeln!(s, "#SBATCH --nodes={nodes}");
    let _ = writeln!(s, "#SBATCH --ntasks-per-node={per_node}");
    if let Some(t) = spec.timeout {
        let secs = t.as_secs().max(60);
        let _ = writeln!(s, "#SBATCH --time={:02}:{:02}:{:02}", secs / 3600, secs / 60 % 60, secs % 60);
    }
    s.push_str("set -euo pipefail\n");
    let mut run = format!(
        "dgrid-run --np {} --comm-dir {}",
        spec.np,
        shell_quote(&spec.comm_dir.display().to_string())
    );
    if nodes > 1 {
        s.push_str("HOSTS=$(scontrol show hostnames \"$SLURM_JOB_NODELIST\" | paste -sd, -)\n");
        run.push_str(" --hosts \"$HOSTS\"");
    }
    if spec.keep_msgs {
        run.push_str(" --keep-msgs");
    }
    if let Some(t) = spec.timeout {
        let _ = write!(run, " --timeout {}", t.as_secs());
    }
    run.push_str(" --");
    for word in std::iter::once(&spec.program).chain(&spec.args) {
        let _ = write!(run, " {}", shell_quote(word));
    }
    let _ = writeln!(s, "exec {run}");
    Ok(s)
}

/// Runs `np` ranks as threads of this process over a fresh job directory, for
/// tests and single-machine tools. Each rank is finalized after `f` returns.
pub fn run_threads<R, F>(np: usize, comm_dir: &Path, config: CommConfig, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&mut CommContext) -> Result<R> + Sync,
{
    let job_id = new_job_id();
    let results: Vec<Result<R>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..np)
            .map(|rank| {
                let (f, job_id, config) = (&f, &job_id, config.clone());
                scope.spawn(move || {
                    let mut ctx = CommContext::new(rank, np, comm_dir, job_id, config)?;
                    let out = f(&mut ctx)?;
                    ctx.finalize()?;
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Launch("rank thread panicked".into()))))
            .collect()
    });
    let out = results.into_iter().collect::<Result<Vec<R>>>()?;
    if !config.keep_msgs {
        let dir = comm_dir.join(&job_id);
        let _ = fs::remove_dir(&dir);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slurm_two_nodes() {
        let mut spec = LaunchSpec::new(64, "/opt/app").comm_dir("/lustre/c");
        spec.hosts = vec!["n1".into(), "n2".into()];
        let s = emit_scheduler_script(&spec, "slurm").unwrap();
        assert!(s.contains("#SBATCH --nodes=2\n"), "{s}");
        assert!(s.contains("#SBATCH --ntasks-per-node=32\n"));
        assert!(s.contains("dgrid-run --np 64 --comm-dir /lustre/c --hosts \"$HOSTS\" -- /opt/app"));
    }

    #[test]
    fn slurm_single_node_and_unknown_flavor() {
        let spec = LaunchSpec::new(1, "true");
        let s = emit_scheduler_script(&spec, "slurm").unwrap();
        assert!(s.contains("--nodes=1\n") && s.contains("--ntasks-per-node=1\n"));
        assert!(!s.contains("HOSTS"));
        assert!(matches!(emit_scheduler_script(&spec, "pbs"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn quoting() {
        assert_eq!(shell_quote("abc/d-e"), "abc/d-e");
        assert_eq!(shell_quote("a b"), "'a b'");
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
        assert_eq!(shell_quote(""), "''");
    }

    #[test]
    fn job_ids_are_unique() {
        let a = new_job_id();
        let b = new_job_id();
        assert_ne!(a, b);
        assert!(!a.contains('/'));
    }

    #[test]
    fn resolves_programs() {
        assert!(resolve_program("sh").is_some());
        assert!(resolve_program("definitely-not-a-program-xyz").is_none());
        assert!(resolve_program("/nonexistent/prog").is_none());
    }

    #[test]
    fn missing_program_spawns_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = LaunchSpec::new(2, "definitely-not-a-program-xyz").comm_dir(tmp.path());
        assert!(matches!(prun(&spec), Err(Error::Launch(_))));
        assert_eq!(fs::read_dir(tmp.path()).map(|d| d.count()).unwrap_or(0), 0);
    }

    #[test]
    fn exit_report_codes() {
        let ok = RankExit { rank: 0, code: Some(0), killed: false };
        let bad = RankExit { rank: 1, code: Some(3), killed: false };
        let mut r = ExitReport {
            job_id: "j".into(),
            job_dir: PathBuf::new(),
            ranks: vec![ok.clone(), ok],
            wall: Duration::ZERO,
            timed_out: false,
            aborted: false,
        };
        assert_eq!(r.exit_code(), 0);
        r.ranks[1] = bad;
        assert_eq!(r.exit_code(), 3);
        assert_eq!(r.failed_ranks(), vec![1]);
        assert!(r.summary().contains("rank 1 exited 3"));
    }
}
