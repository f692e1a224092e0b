fn main() {
    rp_rct::cli::main_with_exit();
}
