fn main() {
    std::process::exit(cheapet_gateway::cli::main_with_args(std::env::args_os()));
}
