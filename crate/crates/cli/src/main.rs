fn main() {
    std::process::exit(oscmap_cli::run(std::env::args_os()));
}
