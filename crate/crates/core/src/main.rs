fn main() {
    std::process::exit(trescaflow::cli::main_with_args(std::env::args()));
}
