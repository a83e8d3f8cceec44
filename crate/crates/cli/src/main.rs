fn main() {
    std::process::exit(iurkit_cli::main_with_args(std::env::args_os()));
}
