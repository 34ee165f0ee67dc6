fn main() {
    std::process::exit(accelsched::cli::run(std::env::args_os()));
}
