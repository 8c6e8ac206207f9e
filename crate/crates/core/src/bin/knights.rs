fn main() {
    std::process::exit(knights::cli::main_with_args(std::env::args_os()));
}
