fn main() {
    std::process::exit(uwbcalib::cli::run(std::env::args_os()));
}
