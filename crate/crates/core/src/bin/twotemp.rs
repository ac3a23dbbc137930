fn main() {
    std::process::exit(twotemp::cli::run_cli(std::env::args_os()));
}
