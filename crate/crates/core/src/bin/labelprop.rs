fn main() {
    std::process::exit(labelprop::cli::run(std::env::args_os()));
}
