fn main() {
    std::process::exit(rioflow::cli::main());
}
