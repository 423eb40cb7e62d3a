fn main() {
    std::process::exit(spinsqueeze::cli::main_impl());
}
