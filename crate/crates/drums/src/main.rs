fn main() {
    std::process::exit(gesture_drums::cli::run(std::env::args_os()));
}
