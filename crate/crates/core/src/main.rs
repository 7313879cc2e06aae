fn main() {
    std::process::exit(gsmr_core::cli::run(std::env::args_os()));
}
