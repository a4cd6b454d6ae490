fn main() {
    std::process::exit(linext_cli::run(std::env::args_os()));
}
