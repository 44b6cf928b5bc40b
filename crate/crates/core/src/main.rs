use clap::Parser;
use hyperadapt::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
