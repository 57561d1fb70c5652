fn main() {
    std::process::exit(toonscan::cli::run(std::env::args_os()));
}
