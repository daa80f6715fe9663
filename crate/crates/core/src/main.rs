fn main() {
    std::process::exit(ovparts::cli::run(std::env::args_os()));
}
