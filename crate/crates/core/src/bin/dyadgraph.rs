fn main() {
    std::process::exit(dyadgraph::cli::main_from_args(std::env::args_os()));
}
