fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(esmhc_cli::dispatch(&args));
}
