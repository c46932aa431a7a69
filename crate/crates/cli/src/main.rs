fn main() {
    std::process::exit(wpnode_cli::run(std::env::args_os()));
}
