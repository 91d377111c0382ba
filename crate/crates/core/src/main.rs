fn main() {
    std::process::exit(eitkit::cli::main(std::env::args_os()));
}
