fn main() {
    std::process::exit(rehab_extract::cli::run(std::env::args_os()));
}
