//! Embeds segment crops with color statistics.
//!
//! Same command line as any other extractor, so it stands in for a CNN
//! backbone when none is installed.

use std::path::PathBuf;

use clap::Parser;
use protorbf_cli::extractor::{run_color_extractor, COLOR_BACKBONE};

#[derive(Debug, Parser)]
#[command(name = "protorbf-color-extractor", version)]
struct Args {
    /// Dataset manifest; accepted for interface compatibility.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    #[arg(long, default_value = COLOR_BACKBONE)]
    backbone: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run_color_extractor(&args.segments, &args.backbone, &args.out) {
        Ok(store) => println!("wrote {} rows of dim {} to {}", store.rows(), store.dim(), args.out.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
