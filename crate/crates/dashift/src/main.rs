fn main() {
    std::process::exit(dashift::cli::run());
}
