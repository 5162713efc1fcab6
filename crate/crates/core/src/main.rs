fn main() {
    std::process::exit(pclpv::cli::run(std::env::args_os()));
}
