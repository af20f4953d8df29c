fn main() {
    std::process::exit(panelalts_cli::run(std::env::args()));
}
