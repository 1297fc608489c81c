fn main() {
    std::process::exit(freeflow::cli::run(std::env::args_os()));
}
