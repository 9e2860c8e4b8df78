fn main() {
    std::process::exit(countsplit::cli::main());
}
