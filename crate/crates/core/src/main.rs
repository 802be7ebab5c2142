fn main() {
    std::process::exit(qlasso::cli::main_with(std::env::args_os()));
}
