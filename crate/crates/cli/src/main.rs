fn main() {
    std::process::exit(personachat_cli::run(std::env::args_os()));
}
