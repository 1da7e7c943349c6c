fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("POSELABEL_LOG", "warn")).init();
    std::process::exit(poselabel::cli::run_from_args(std::env::args_os()));
}
