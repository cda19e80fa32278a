fn main() {
    std::process::exit(grbe::cli::run(std::env::args_os()));
}
