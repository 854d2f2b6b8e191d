fn main() {
    std::process::exit(devgan::cli::run(std::env::args_os()));
}
