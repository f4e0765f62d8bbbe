fn main() {
    env_logger::init();
    std::process::exit(mcrdl::cli::main());
}
