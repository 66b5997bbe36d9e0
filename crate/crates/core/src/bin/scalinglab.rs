fn main() {
    std::process::exit(scalinglab::cli::run(std::env::args_os()));
}
