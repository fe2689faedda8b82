fn main() {
    std::process::exit(relpose::cli::run(std::env::args_os()));
}
