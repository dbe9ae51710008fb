fn main() {
    std::process::exit(cmfl::cli::main_from_env());
}
