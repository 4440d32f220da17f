fn main() { std::process::exit(muslcat::cli::run_from_env()); }
