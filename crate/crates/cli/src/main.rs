fn main() {
    let quiet = std::env::args().any(|a| a == "--quiet");
    let level = if quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    std::process::exit(scorewalk_cli::main_with_args(std::env::args_os()));
}
