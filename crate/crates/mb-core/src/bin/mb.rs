fn main() {
    std::process::exit(mb_core::cli::dispatch(std::env::args()));
}
