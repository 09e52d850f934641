fn main() {
    std::process::exit(psurv::cli::run(std::env::args_os()));
}
