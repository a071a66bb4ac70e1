fn main() {
    std::process::exit(dcpnet::cli::main_with_args(std::env::args_os()));
}
