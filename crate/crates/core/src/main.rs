fn main() {
    std::process::exit(auxcrf::cli::run(std::env::args_os()));
}
