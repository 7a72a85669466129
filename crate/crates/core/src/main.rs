fn main() {
    std::process::exit(openavs_core::cli::main_with_args(std::env::args_os()));
}
