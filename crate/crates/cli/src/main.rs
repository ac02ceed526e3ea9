use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = edakit_cli::Cli::parse();
    if let Err(e) = edakit_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(edakit_cli::exit_code(&e));
    }
}
