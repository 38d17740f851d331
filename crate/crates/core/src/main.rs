fn main() {
    std::process::exit(gnas::cli::run_command(std::env::args_os()));
}
