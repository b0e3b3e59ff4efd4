fn main() {
    std::process::exit(ccdi::cli::main_with_args(std::env::args_os()));
}
