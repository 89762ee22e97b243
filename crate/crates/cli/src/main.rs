fn main() {
    mapbench_cli::init_logging();
    std::process::exit(mapbench_cli::run(std::env::args_os()));
}
