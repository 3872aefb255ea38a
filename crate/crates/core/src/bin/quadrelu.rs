fn main() {
    std::process::exit(quadrelu::cli::run_from(std::env::args_os()));
}
