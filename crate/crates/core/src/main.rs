fn main() {
    std::process::exit(msgp::cli::run(std::env::args_os()));
}
