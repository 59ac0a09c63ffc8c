fn main() {
    std::process::exit(stagegate_server::cli::run(std::env::args_os()));
}
