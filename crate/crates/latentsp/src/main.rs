fn main() {
    std::process::exit(latentsp::cli::run(std::env::args_os()));
}
