fn main() {
    std::process::exit(skewlab_cli::run_command(std::env::args_os()));
}
