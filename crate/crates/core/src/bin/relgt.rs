fn main() {
    std::process::exit(relgt::cli::main_with_args(std::env::args_os()));
}
