mod cli;

use clap::Parser;

fn main() {
    let args = cli::Cli::parse();
    let json_out = args.json;
    if let Err(e) = cli::run(args) {
        if json_out {
            if let Ok(text) = mincq::io::to_canonical_json(&cli::error_json(&e)) {
                print!("{text}");
            }
        }
        eprintln!("error: {e}");
        std::process::exit(cli::exit_code(&e));
    }
}
