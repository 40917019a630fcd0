use clap::Parser;

fn main() {
    let cli = stslab::cli::Cli::parse();
    std::process::exit(stslab::cli::run(cli));
}
