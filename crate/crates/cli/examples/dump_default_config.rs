//! Prints the fully resolved desk-scale default configuration as TOML.
//! Usage: cargo run -p pictsum-cli --example dump_default_config -- <workdir>

fn main() {
    let workdir = std::env::args().nth(1).unwrap_or_else(|| "work".to_string());
    print!("{}", pictsum_cli::default_config_toml(std::path::Path::new(&workdir)));
}
