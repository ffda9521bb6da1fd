fn main() {
    std::process::exit(nvkit_cli::run_cli(std::env::args_os()));
}
