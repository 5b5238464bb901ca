fn main() {
    std::process::exit(pedrisk::cli::run(std::env::args_os()));
}
