fn main() {
    std::process::exit(lfr::cli::main());
}
