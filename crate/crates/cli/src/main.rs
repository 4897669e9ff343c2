fn main() {
    std::process::exit(densefuse_cli::main_with_args(std::env::args_os()));
}
