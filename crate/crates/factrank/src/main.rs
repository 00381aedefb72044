fn main() {
    std::process::exit(factrank::cli::main_with(std::env::args_os()));
}
