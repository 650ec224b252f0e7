use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let (code, text) = prodnorm::cli::dispatch(std::env::args_os());
    let res = if code == 0 {
        std::io::stdout().write_all(text.as_bytes())
    } else {
        std::io::stderr().write_all(text.as_bytes())
    };
    if res.is_err() {
        return ExitCode::from(74);
    }
    ExitCode::from(code as u8)
}
