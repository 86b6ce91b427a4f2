use clap::Parser;

fn main() {
    let cli = oslab_cli::cmd::Cli::parse();
    if let Err(e) = oslab_cli::cmd::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
