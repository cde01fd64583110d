use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = ntnsim::cli::Cli::parse();
    std::process::exit(ntnsim::cli::execute(cli));
}
