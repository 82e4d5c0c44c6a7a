fn main() {
    std::process::exit(nsem::cli::run(std::env::args_os()));
}
