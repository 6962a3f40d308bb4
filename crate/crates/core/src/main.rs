fn main() {
    std::process::exit(crowdwarn::cli::run(std::env::args_os()))
}
