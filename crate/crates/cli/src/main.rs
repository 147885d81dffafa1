fn main() {
    std::process::exit(pilotmatch_cli::run(std::env::args_os()));
}
