use clap::Parser;
use eikonal::cli;

fn main() {
    let args = cli::Cli::parse();
    std::process::exit(cli::run(args));
}
