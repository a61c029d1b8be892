use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = ipv8_cli::Cli::parse();
    std::process::exit(ipv8_cli::run(cli));
}
