fn main() {
    std::process::exit(pcd::cli::main());
}
