use clap::Parser;

fn main() {
    let cli = setpool::cli::Cli::parse();
    std::process::exit(setpool::cli::run(cli));
}
