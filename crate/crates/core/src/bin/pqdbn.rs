fn main() {
    std::process::exit(pqdbn::harness::cli_dispatch(std::env::args_os()));
}
