fn main() {
    std::process::exit(mvfan::cli::main_with(std::env::args_os()));
}
