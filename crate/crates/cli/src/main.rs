fn main() {
    std::process::exit(echomamba_cli::run(std::env::args_os()));
}
