fn main() {
    std::process::exit(dlgfa::cli::run_command(std::env::args_os()));
}
