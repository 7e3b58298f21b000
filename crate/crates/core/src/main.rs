fn main() {
    std::process::exit(synbias::cli::run(std::env::args_os()));
}
