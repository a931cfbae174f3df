fn main() {
    std::process::exit(ehfkt::cli::run(std::env::args_os()));
}
