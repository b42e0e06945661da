use clap::Parser;

fn main() {
    if let Err(e) = sqn_cli::run(sqn_cli::Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
