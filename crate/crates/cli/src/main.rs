fn main() {
    std::process::exit(dualcam_cli::run(std::env::args_os()));
}
