fn main() {
    std::process::exit(poretopo_cli::run(std::env::args_os()));
}
