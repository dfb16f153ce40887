fn main() {
    std::process::exit(uax_core::cli::run(std::env::args_os()));
}
