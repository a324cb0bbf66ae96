use clap::Parser;
use optiks::cli;

fn main() {
    let outcome = cli::run(cli::Cli::parse());
    print!("{}", outcome.summary);
    std::process::exit(outcome.exit_code);
}
