fn main() {
    std::process::exit(fapsm::cli::main_with_args(std::env::args_os()));
}
