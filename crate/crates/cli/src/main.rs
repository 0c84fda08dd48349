fn main() {
    std::process::exit(pinn_cli::run(std::env::args_os()));
}
