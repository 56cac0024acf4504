fn main() {
    std::process::exit(pcdiff::cli::run(std::env::args_os()));
}
