fn main() {
    std::process::exit(hte_core::cli::main_with_args(std::env::args_os()));
}
