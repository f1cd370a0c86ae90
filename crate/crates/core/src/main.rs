fn main() {
    std::process::exit(pensplinem::cli::run(std::env::args_os()));
}
