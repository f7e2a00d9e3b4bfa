fn main() {
    std::process::exit(rpw::cli::run(std::env::args_os()));
}
