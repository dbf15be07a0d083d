use clap::Parser;

fn main() {
    let cli = qdstat::cli::Cli::parse();
    if let Err(e) = qdstat::cli::run(cli) {
        eprintln!("error: {:#}", e.error);
        std::process::exit(e.code);
    }
}
