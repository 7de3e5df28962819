fn main() {
    std::process::exit(tumor_control::cli::main_with_args(std::env::args_os()));
}
