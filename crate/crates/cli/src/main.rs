fn main() {
    std::process::exit(dgcnn_cli::run_cli(std::env::args()));
}
