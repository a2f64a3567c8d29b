fn main() {
    std::process::exit(vista::cli::run(std::env::args_os()));
}
