fn main() {
    std::process::exit(proprio::cli::run(std::env::args_os()));
}
