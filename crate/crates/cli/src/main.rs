fn main() {
    std::process::exit(litkb::cli::run(std::env::args_os()));
}
