fn main() {
    std::process::exit(poconet::cli::run(std::env::args_os()));
}
