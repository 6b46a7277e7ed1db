fn main() {
    std::process::exit(segtrack::harness::cli::run(std::env::args_os()));
}
