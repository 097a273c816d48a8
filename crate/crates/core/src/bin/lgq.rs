fn main() {
    std::process::exit(lgq_smooth::cli::main_with_args(std::env::args_os()));
}
