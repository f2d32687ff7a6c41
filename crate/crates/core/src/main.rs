fn main() {
    std::process::exit(vesselad::cli::run_cli());
}
