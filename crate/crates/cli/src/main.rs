fn main() {
    std::process::exit(gamlp_cli::dispatch(std::env::args_os()));
}
