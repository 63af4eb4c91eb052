use clap::Parser;
use gridsd2e_cli::{execute, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(dir) => println!("{}", dir.display()),
        Err(f) => {
            eprintln!("error: {f}");
            std::process::exit(f.exit_code());
        }
    }
}
