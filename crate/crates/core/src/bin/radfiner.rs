fn main() {
    std::process::exit(radfiner::cli::run_from(std::env::args_os()));
}
