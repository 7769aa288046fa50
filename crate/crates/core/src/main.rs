fn main() {
    std::process::exit(jexplore::cli::run(std::env::args_os()));
}
