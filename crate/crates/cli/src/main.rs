use clap::Parser;

fn main() {
    let cli = bvda_cli::Cli::parse();
    if let Err(e) = bvda_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
