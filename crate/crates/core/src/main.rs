fn main() {
    std::process::exit(recpo::cli::main_with_args(std::env::args_os()));
}
