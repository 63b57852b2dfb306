fn main() {
    std::process::exit(crossframe::cli::run(std::env::args_os()));
}
