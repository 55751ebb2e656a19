fn main() {
    std::process::exit(hpfold::cli::main_with_args(std::env::args_os()));
}
