fn main() {
    std::process::exit(imly::cli::run(std::env::args_os()));
}
