fn main() {
    std::process::exit(dualpath::cli::run_cli(std::env::args_os()));
}
