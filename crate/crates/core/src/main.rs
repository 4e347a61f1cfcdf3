fn main() {
    std::process::exit(densecap::cli::main_with_args(std::env::args_os()));
}
