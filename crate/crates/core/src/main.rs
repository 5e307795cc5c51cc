fn main() {
    std::process::exit(gamedyn::cli::main_entry());
}
