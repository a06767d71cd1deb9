fn main() {
    std::process::exit(delayscale::cli::run(std::env::args_os()));
}
