fn main() {
    std::process::exit(sparg::cli::run_cli(std::env::args_os()));
}
