fn main() {
    std::process::exit(irg_ldp::cli::run());
}
