fn main() {
    // unlocked handles: the service threads log to stderr while `run` is active
    let code = ballchain_cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
