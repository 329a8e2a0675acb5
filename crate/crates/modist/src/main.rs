fn main() { std::process::exit(modist::cli::run(std::env::args().skip(1).collect())); }
