fn main() {
    std::process::exit(dlmp_core::cli::main(std::env::args_os()));
}
