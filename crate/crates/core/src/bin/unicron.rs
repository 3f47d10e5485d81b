fn main() {
    std::process::exit(unicron::cli::main_with_args(std::env::args_os()));
}
