use clap::Parser;

fn main() {
    let cli = match quasistat_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap's own default is 2, which here means non-convergence.
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    std::process::exit(quasistat_cli::main_with(cli));
}
