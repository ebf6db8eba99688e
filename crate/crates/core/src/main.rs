fn main() {
    std::process::exit(sparse_sir::cli::main_with_args(std::env::args_os()));
}
