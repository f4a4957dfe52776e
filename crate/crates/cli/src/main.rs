fn main() {
    std::process::exit(inpaint_cli::run(std::env::args_os()));
}
