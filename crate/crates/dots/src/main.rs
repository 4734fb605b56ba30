use clap::Parser;

fn main() {
    let cli = dots::cli::Cli::parse();
    let mut stdout = std::io::stdout();
    match dots::cli::run(cli, &mut stdout) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
