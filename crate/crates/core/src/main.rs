fn main() {
    std::process::exit(morse_corners::cli::run());
}
