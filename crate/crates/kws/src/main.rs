fn main() { std::process::exit(kws::cli::main()) }
