fn main() {
    std::process::exit(rim_core::harness::cli::run(std::env::args_os()));
}
