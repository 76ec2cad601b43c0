use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = formquery::cli::Cli::parse();
    if let Err(e) = formquery::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
