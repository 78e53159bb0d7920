fn main() {
    std::process::exit(promptforge_cli::run(std::env::args_os()));
}
