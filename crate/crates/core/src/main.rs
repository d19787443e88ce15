fn main() {
    std::process::exit(snn_predict::cli::main_with_args(std::env::args_os()));
}
