fn main() {
    std::process::exit(qvd::cli::run(std::env::args_os()));
}
