fn main() {
    std::process::exit(htawgm::cli::run(std::env::args_os()));
}
