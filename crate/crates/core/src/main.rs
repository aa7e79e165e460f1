fn main() {
    std::process::exit(plbicluster::cli::run(std::env::args_os()));
}
