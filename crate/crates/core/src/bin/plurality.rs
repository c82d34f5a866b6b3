use std::process::ExitCode;

use clap::Parser;
use plurality::cli::{run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(report) => {
            let a = &report.aggregate;
            let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
            println!(
                "{} trials ({} failed): win rate {}, eps rate {}, median eps time {}, median full time {}",
                a.trials,
                a.failed,
                fmt(a.win_rate),
                fmt(a.eps_rate),
                fmt(a.median_eps_time),
                fmt(a.median_full_time)
            );
            println!("wrote {}", report.config.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
