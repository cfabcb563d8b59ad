fn main() {
    std::process::exit(spmis_core::cli::run(std::env::args_os()));
}
