fn main() {
    std::process::exit(photonic_tdm::cli::run(std::env::args_os()));
}
