fn main() {
    std::process::exit(scaforge::cli::run(std::env::args_os()));
}
