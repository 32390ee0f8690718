fn main() {
    std::process::exit(lorasculpt_cli::run(std::env::args_os()));
}
