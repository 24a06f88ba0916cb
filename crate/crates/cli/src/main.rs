fn main() {
    std::process::exit(ceq_cli::run(std::env::args_os()));
}
