fn main() {
    let code = esf_detect::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
