use std::collections::BTreeMap;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let env: BTreeMap<String, String> = std::env::vars().collect();
    std::process::exit(persona_probe::cli::main_with_args(std::env::args_os(), &env));
}
