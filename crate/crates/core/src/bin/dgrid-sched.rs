use std::process::ExitCode;

use clap::Parser;
use dgrid::mapdist::Map;
use dgrid::pitfalls::{compute_schedule, schedule_message_count};

/// Print the redistribution schedule between two maps as CSV.
#[derive(Parser, Debug)]
#[command(name = "dgrid-sched", version)]
struct Args {
    /// Global array shape, e.g. 4x4.
    #[arg(long)]
    shape: String,
    /// Source map literal, e.g. "grid=2x1;dist=b;procs=0-1".
    #[arg(long)]
    src: String,
    /// Destination map literal.
    #[arg(long)]
    dst: String,
}

fn run(args: &Args) -> dgrid::Result<()> {
    let shape = args
        .shape
        .split('x')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| dgrid::Error::InvalidArgument(format!("bad shape {:?}", args.shape)))?;
    let src: Map = args.src.parse()?;
    let dst: Map = args.dst.parse()?;
    let sched = compute_schedule(&shape, &src, &dst)?;
    print!("{}", sched.to_csv());
    eprintln!(
        "transfers={} messages={}",
        sched.transfers.len(),
        schedule_message_count(&sched)
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(&Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dgrid-sched: {e}");
            ExitCode::from(2)
        }
    }
}
