fn main() {
    std::process::exit(measure_rigidity::cli::main_with_args(std::env::args_os()));
}
