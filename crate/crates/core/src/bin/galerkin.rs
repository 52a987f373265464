fn main() {
    std::process::exit(galerkin::cli::run(std::env::args_os()));
}
