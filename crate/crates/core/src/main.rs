fn main() {
    std::process::exit(setret::cli::run(std::env::args_os()));
}
