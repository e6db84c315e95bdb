fn main() {
    std::process::exit(svigl_cli::main_with_args(std::env::args_os()));
}
