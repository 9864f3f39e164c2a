fn main() {
    std::process::exit(recourse_cli::run(std::env::args_os()));
}
