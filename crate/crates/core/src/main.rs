fn main() {
    std::process::exit(sllbar::io::run_command(std::env::args_os()));
}
