fn main() {
    std::process::exit(nnpnn::cli::run(std::env::args_os()));
}
