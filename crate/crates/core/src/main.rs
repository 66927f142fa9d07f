fn main() {
    echopipe::cli::init_runtime();
    std::process::exit(echopipe::cli::run_command(std::env::args_os()));
}
