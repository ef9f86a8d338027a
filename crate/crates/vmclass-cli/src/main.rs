fn main() {
    if let Err(e) = vmclass_cli::run(std::env::args()) {
        eprintln!("error: {e}");
        eprintln!("error_code={}", e.code());
        std::process::exit(1);
    }
}
