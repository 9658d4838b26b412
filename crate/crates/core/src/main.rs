use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    match netprint::cli::run(std::env::args_os(), &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("netprint: {msg}");
            ExitCode::FAILURE
        }
    }
}
