fn main() {
    std::process::exit(torus_scope::cli::main_with_args(std::env::args_os()));
}
