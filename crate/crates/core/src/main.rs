fn main() {
    std::process::exit(speechui::cli::run(std::env::args_os()));
}
