fn main() {
    std::process::exit(clam::orchestrator::cli::run(std::env::args_os()));
}
