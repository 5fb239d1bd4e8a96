fn main() {
    std::process::exit(lesionkit_cli::dispatch(std::env::args_os()));
}
