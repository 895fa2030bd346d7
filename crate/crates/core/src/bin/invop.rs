fn main() {
    std::process::exit(invop::cli::run(std::env::args_os()));
}
