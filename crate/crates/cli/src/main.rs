use clap::Parser;
use deeplm_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("deeplm: {e}");
        std::process::exit(e.exit_code());
    }
}
