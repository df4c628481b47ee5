fn main() {
    std::process::exit(piq::cli::run(std::env::args_os()));
}
