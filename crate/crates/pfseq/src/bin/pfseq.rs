fn main() {
    std::process::exit(pfseq::cli::run(std::env::args_os()));
}
