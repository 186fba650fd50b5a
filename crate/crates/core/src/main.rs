fn main() {
    std::process::exit(nlup::cli::dispatch(std::env::args_os()));
}
