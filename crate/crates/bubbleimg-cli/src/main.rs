fn main() {
    std::process::exit(bubbleimg_cli::run(std::env::args_os()));
}
