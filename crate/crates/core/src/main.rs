fn main() {
    std::process::exit(fbsde_llr::cli::main_with_args(std::env::args_os()));
}
