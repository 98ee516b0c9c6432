fn main() {
    std::process::exit(swdstyle::cli::run(std::env::args_os()));
}
