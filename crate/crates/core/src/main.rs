fn main() {
    std::process::exit(mrspde::cli::run(std::env::args_os()));
}
