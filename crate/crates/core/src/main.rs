fn main() {
    std::process::exit(hybrid_aug::cli::main_with_args(std::env::args_os()));
}
