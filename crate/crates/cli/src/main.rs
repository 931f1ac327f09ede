use clap::Parser;
use segkit_cli::{run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            std::process::exit(err.exit_code());
        }
    };
    let result = run(&cli);
    if result.code == 0 {
        print!("{}", result.summary);
    } else {
        eprintln!("{}", result.summary.trim_end());
    }
    std::process::exit(result.code);
}
