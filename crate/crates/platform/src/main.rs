fn main() {
    std::process::exit(thermotwin::cli::run(std::env::args_os()));
}
