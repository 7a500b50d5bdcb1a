fn main() {
    std::process::exit(vecpr::cli::run(std::env::args_os()));
}
