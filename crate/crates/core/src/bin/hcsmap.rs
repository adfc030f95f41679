fn main() {
    std::process::exit(hcsmap::cli::main());
}
