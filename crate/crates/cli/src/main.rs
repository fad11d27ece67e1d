fn main() {
    std::process::exit(frac_calderon_cli::run(std::env::args_os()));
}
