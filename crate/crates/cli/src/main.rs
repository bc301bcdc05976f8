use clap::Parser;

fn main() {
    let cli = l2r_cli::Cli::parse();
    if let Err(e) = l2r_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
