fn main() {
    std::process::exit(carbq::run(std::env::args_os()));
}
