fn main() {
    std::process::exit(shiftpaint::cli::run(std::env::args()));
}
