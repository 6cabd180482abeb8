use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(ustomo::cli::run(ustomo::cli::Cli::parse()));
}
