mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: cannot start {} worker threads: {e}", cli.threads);
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Mine(a) => commands::cmd_mine(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Quality(a) => commands::cmd_quality(a),
        Command::Latent(a) => commands::cmd_latent(a),
        Command::Synth(a) => commands::cmd_synth(a),
        Command::SynthEmbed(a) => commands::cmd_synth_embed(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f @ Failure::Invariant(_)) => {
            eprint!("error: {f}");
            ExitCode::from(f.exit_code())
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
