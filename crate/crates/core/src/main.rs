fn main() {
    std::process::exit(oosjoint::cli::main());
}
