fn main() {
    std::process::exit(jellium::cli::main_with_args(std::env::args_os()));
}
