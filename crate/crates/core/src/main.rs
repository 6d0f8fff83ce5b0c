fn main() {
    std::process::exit(ctmc_move::cli::run());
}
