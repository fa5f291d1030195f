fn main() {
    if let Err(e) = qtfm::cli::main_from(std::env::args_os()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
