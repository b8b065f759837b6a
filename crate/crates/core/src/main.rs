fn main() {
    std::process::exit(ccq::cli::run(std::env::args_os()));
}
