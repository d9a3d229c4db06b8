fn main() {
    std::process::exit(mixpaste_cli::run(std::env::args_os()));
}
