fn main() {
    std::process::exit(fltrigger::cli::run_cli(std::env::args_os()));
}
