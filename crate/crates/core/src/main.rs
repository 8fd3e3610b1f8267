fn main() {
    std::process::exit(pairshap::cli::main_with_args(std::env::args_os()));
}
