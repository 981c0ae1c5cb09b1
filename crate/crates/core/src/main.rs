fn main() {
    std::process::exit(sqa_core::cli::run(std::env::args_os()));
}
