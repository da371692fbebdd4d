fn main() {
    std::process::exit(metamorph_cli::run(std::env::args_os()));
}
