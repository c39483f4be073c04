use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use dgrid::fsmpi::{CommContext, ENV_RANK};
use dgrid::hpcbench::{self, BenchResult, MapMode, RaParams, StreamInit};
use dgrid::launcher::{self, LaunchSpec};

/// HPC Challenge style kernels over distributed arrays.
///
/// Run without DGRID_RANK set, the tool launches itself on --np ranks.
#[derive(Parser, Debug)]
#[command(name = "dgrid-bench", version)]
struct Args {
    #[command(subcommand)]
    kernel: Kernel,
    /// Number of ranks.
    #[arg(long, global = true, default_value_t = 1)]
    np: usize,
    /// Problem size: vector length (stream), transform length (fft),
    /// table length (ra), largest message in bytes (pingpong), cases (redist).
    #[arg(long, global = true)]
    size: Option<usize>,
    /// Repetitions: triad iterations (stream) or trials per size (pingpong).
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Append results to this CSV file (written by rank 0).
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Run with every map set to 1, i.e. the serial program.
    #[arg(long, global = true)]
    no_map: bool,
    #[arg(long, global = true)]
    comm_dir: Option<PathBuf>,
    /// Kill the job after this many seconds.
    #[arg(long, global = true)]
    timeout: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Kernel {
    /// STREAM triad A = B + s*C.
    Stream,
    /// Four-step parallel 1-D FFT.
    Fft,
    /// RandomAccess table updates.
    Ra {
        /// Number of updates; defaults to four times the table length.
        #[arg(long)]
        updates: Option<usize>,
        #[arg(long, default_value_t = hpcbench::RA_MAX_BATCH)]
        batch: usize,
    },
    /// Messaging latency and bandwidth between two ranks.
    Pingpong,
    /// Randomized redistribution round trips.
    Redist,
    /// High Performance Linpack (not available).
    Hpl,
}

fn run_rank(args: &Args) -> dgrid::Result<Vec<BenchResult>> {
    let mut ctx = CommContext::from_env()?;
    let mode = if args.no_map { MapMode::Off } else { MapMode::Mapped };
    let results = match args.kernel {
        Kernel::Stream => {
            let n = args.size.unwrap_or(1 << 20);
            let run = hpcbench::stream_triad(&mut ctx, n, 3.0, args.iters.unwrap_or(10), StreamInit::Seeded, mode)?;
            vec![run.result]
        }
        Kernel::Fft => {
            let n = args.size.unwrap_or(1 << 10);
            if !n.is_power_of_two() {
                return Err(dgrid::Error::InvalidArgument(format!("fft size {n} is not a power of two")));
            }
            let p = 1 << (n.trailing_zeros() / 2);
            let run = hpcbench::parallel_fft_1d(&mut ctx, p, n / p, mode, true)?;
            vec![run.result]
        }
        Kernel::Ra { updates, batch } => {
            let size = args.size.unwrap_or(1 << 10);
            if !size.is_power_of_two() {
                return Err(dgrid::Error::InvalidArgument(format!("table length {size} is not a power of two")));
            }
            let mut params = RaParams::new(size.trailing_zeros(), updates.unwrap_or(4 * size));
            params.batch = batch;
            let run = hpcbench::random_access(&mut ctx, params, mode)?;
            if ctx.rank() == 0 {
                log::info!("ra: rank 0 sent {} data and {} control messages", run.data_messages, run.control_messages);
            }
            vec![run.result]
        }
        Kernel::Pingpong => hpcbench::pingpong(&mut ctx, args.size.unwrap_or(8 << 20), args.iters.unwrap_or(7))?,
        Kernel::Redist => {
            let (result, failures) = hpcbench::redist_round_trip(&mut ctx, args.size.unwrap_or(50), args.seed)?;
            for f in &failures {
                eprintln!("{f}");
            }
            vec![result]
        }
        Kernel::Hpl => unreachable!("rejected before launch"),
    };
    ctx.finalize()?;
    Ok(if ctx.rank() == 0 { results } else { Vec::new() })
}

fn report(args: &Args, results: &[BenchResult]) -> dgrid::Result<()> {
    println!("{}", hpcbench::CSV_HEADER);
    for r in results {
        println!("{}", r.csv_row());
    }
    if let Some(path) = &args.csv {
        let mut all = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| dgrid::Error::io(path, e))?;
            all.extend(text.lines().skip(1).map(str::to_string));
        }
        all.extend(results.iter().map(BenchResult::csv_row));
        let body = format!("{}\n{}\n", hpcbench::CSV_HEADER, all.join("\n"));
        std::fs::write(path, body).map_err(|e| dgrid::Error::io(path, e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Kernel::Hpl = args.kernel {
        eprintln!("dgrid-bench: hpl: not implemented");
        return ExitCode::from(2);
    }

    if std::env::var_os(ENV_RANK).is_none() {
        let exe = match std::env::current_exe() {
            Ok(p) => p.display().to_string(),
            Err(e) => {
                eprintln!("dgrid-bench: cannot locate own executable: {e}");
                return ExitCode::from(2);
            }
        };
        let mut spec = LaunchSpec::new(args.np, exe).args(std::env::args().skip(1));
        if let Some(dir) = &args.comm_dir {
            spec.comm_dir = dir.clone();
        }
        spec.timeout = args.timeout.map(Duration::from_secs);
        spec.recv_timeout = spec.timeout;
        return match launcher::prun(&spec) {
            Ok(rep) if rep.success() => ExitCode::SUCCESS,
            Ok(rep) => {
                eprintln!("dgrid-bench: {}", rep.summary());
                ExitCode::from(rep.exit_code().clamp(1, 255) as u8)
            }
            Err(e) => {
                eprintln!("dgrid-bench: {e}");
                ExitCode::from(2)
            }
        };
    }

    match run_rank(&args).and_then(|results| {
        if !results.is_empty() {
            report(&args, &results)?;
        }
        Ok(results.iter().all(|r| r.correct))
    }) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("dgrid-bench: result check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("dgrid-bench: {e}");
            ExitCode::from(2)
        }
    }
}
