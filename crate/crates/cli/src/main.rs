use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    sonospine_cli::tune_allocator();
    let cli = sonospine_cli::Cli::parse();
    match sonospine_cli::run(&cli, &mut std::io::stdout()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string().replace('\n', " ")).collect();
            eprintln!("error: {}", chain.join(": "));
            ExitCode::FAILURE
        }
    }
}
