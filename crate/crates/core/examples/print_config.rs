//! Prints a built-in configuration as TOML, ready to edit and pass to
//! `pofsm --config`.
//!
//! cargo run --example print_config -- desk|full

use pofsm::pipeline::Config;

fn main() {
    let cfg = match std::env::args().nth(1).as_deref() {
        Some("full") => Config::full(),
        Some("desk") | None => Config::desk(),
        Some(other) => {
            eprintln!("unknown preset `{other}` (expected desk or full)");
            std::process::exit(1);
        }
    };
    print!("{}", cfg.to_toml());
}
