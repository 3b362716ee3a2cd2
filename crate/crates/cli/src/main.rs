fn main() {
    std::process::exit(enet_cp_cli::run(std::env::args_os()));
}
