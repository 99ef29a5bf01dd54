use clap::Parser;

fn main() {
    let cli = gdro_cli::Cli::parse();
    if let Err(e) = gdro_cli::execute(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
