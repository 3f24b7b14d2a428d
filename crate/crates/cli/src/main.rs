fn main() {
    std::process::exit(rdr_cli::run(std::env::args_os()));
}
