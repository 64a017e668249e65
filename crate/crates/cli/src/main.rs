use clap::Parser;
use eprop_cli::{dispatch, Cli};

fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli, &argv) {
        eprintln!("eprop: {e}");
        std::process::exit(e.exit_code());
    }
}
