fn main() {
    std::process::exit(rgbdsplat::cli::run(std::env::args_os()));
}
