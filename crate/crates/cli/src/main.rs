fn main() {
    // Unlocked handles: worker threads may log while a command is running.
    let code = textcontour_cli::run(
        std::env::args_os(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    std::process::exit(code);
}
