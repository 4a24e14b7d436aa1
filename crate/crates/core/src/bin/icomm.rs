fn main() {
    std::process::exit(icomm::cli::main());
}
