fn main() {
    std::process::exit(harnack_lab::cli::run_from_args(std::env::args_os()));
}
