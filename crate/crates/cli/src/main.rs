use clap::Parser;

fn main() {
    let cli = htp_cli::Cli::parse();
    if let Err(e) = htp_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
