use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = pavesam::cli::Cli::parse();
    let code = match pavesam::cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            let body = serde_json::json!({"error": {"code": e.code(), "message": e.to_string()}});
            eprintln!("{body}");
            1
        }
    };
    std::process::exit(code);
}
