fn main() {
    std::process::exit(ncmart::cli::main_with_args(std::env::args_os()));
}
