fn main() {
    std::process::exit(featflow::cli::run(std::env::args_os()));
}
