fn main() {
    std::process::exit(spinbath::cli::run_from(std::env::args_os()));
}
