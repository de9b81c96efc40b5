fn main() {
    std::process::exit(weakhyp::cli::run(std::env::args_os()));
}
