fn main() {
    std::process::exit(hola::cli::run(std::env::args_os()));
}
