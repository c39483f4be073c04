use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use clap::Parser;
use dgrid::launcher::{self, LaunchSpec, DEFAULT_RSH};

static ABORT: AtomicBool = AtomicBool::new(false);

/// Launch N copies of a program as SPMD ranks sharing a message directory.
#[derive(Parser, Debug)]
#[command(name = "dgrid-run", version)]
struct Args {
    /// Number of ranks.
    #[arg(long)]
    np: usize,
    /// Directory for message files; must be visible to every host.
    #[arg(long)]
    comm_dir: Option<PathBuf>,
    /// Comma-separated hosts; ranks are placed round-robin.
    #[arg(long, value_delimiter = ',')]
    hosts: Vec<String>,
    /// Keep message files and rank logs after the run.
    #[arg(long)]
    keep_msgs: bool,
    /// Kill the job after this many seconds.
    #[arg(long)]
    timeout: Option<u64>,
    /// Receive timeout handed to every rank, in seconds.
    #[arg(long)]
    recv_timeout: Option<u64>,
    /// Remote-shell template with {host} and {cmd} placeholders.
    #[arg(long, default_value = DEFAULT_RSH)]
    rsh: String,
    /// Print a batch script for this scheduler instead of running.
    #[arg(long, value_name = "FLAVOR")]
    emit_script: Option<String>,
    /// Program and its arguments.
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let (program, rest) = args.command.split_first().expect("clap requires a command");
    let mut spec = LaunchSpec::new(args.np, program.clone()).args(rest.iter().cloned());
    if let Some(dir) = args.comm_dir {
        spec.comm_dir = dir;
    }
    spec.hosts = args.hosts;
    spec.keep_msgs = args.keep_msgs;
    spec.timeout = args.timeout.map(Duration::from_secs);
    spec.recv_timeout = args.recv_timeout.map(Duration::from_secs);
    spec.rsh = args.rsh;

    if let Some(flavor) = args.emit_script {
        return match launcher::emit_scheduler_script(&spec, &flavor) {
            Ok(script) => {
                print!("{script}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("dgrid-run: {e}");
                ExitCode::from(2)
            }
        };
    }

    if let Err(e) = ctrlc::set_handler(|| ABORT.store(true, Ordering::SeqCst)) {
        eprintln!("dgrid-run: cannot install interrupt handler: {e}");
    }
    match launcher::prun_with_abort(&spec, &ABORT) {
        Ok(report) => {
            if !report.success() {
                eprintln!("dgrid-run: {}", report.summary());
                eprintln!("dgrid-run: rank logs kept in {}", report.job_dir.display());
            }
            ExitCode::from(report.exit_code().clamp(0, 255) as u8)
        }
        Err(e) => {
            eprintln!("dgrid-run: {e}");
            ExitCode::from(2)
        }
    }
}
