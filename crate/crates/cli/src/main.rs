fn main() {
    std::process::exit(embrich_cli::cli_main(std::env::args_os()));
}
