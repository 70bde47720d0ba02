mod args;
mod bundle;
mod commands;
mod config;
mod failure;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    match simavg::install(|| commands::run(cli.command)) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("simavg: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
