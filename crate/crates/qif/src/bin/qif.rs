fn main() {
    std::process::exit(qif::cli::run());
}
