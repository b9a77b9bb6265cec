fn main() {
    std::process::exit(metarx::cli::cli_main(std::env::args_os()));
}
