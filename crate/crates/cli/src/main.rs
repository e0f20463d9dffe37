use clap::Parser;
use mdp_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(failure) = run(&cli, &mut std::io::stdout().lock()) {
        eprintln!("{}", failure.line());
        std::process::exit(failure.code);
    }
}
