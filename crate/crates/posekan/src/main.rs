fn main() {
    std::process::exit(posekan::cli::run(std::env::args_os()));
}
