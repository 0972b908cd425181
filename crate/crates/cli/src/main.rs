fn main() {
    std::process::exit(medmus_cli::run(std::env::args_os()));
}
