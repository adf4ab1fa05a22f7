fn main() {
    std::process::exit(loopeval_cli::run(std::env::args_os()));
}
