use clap::Parser;

fn main() {
    let cli = match asdflow_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { asdflow_cli::commands::EXIT_CONFIG } else { 0 });
        }
    };
    let code = match asdflow_cli::dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            asdflow_cli::exit_code(&e)
        }
    };
    std::process::exit(code);
}
