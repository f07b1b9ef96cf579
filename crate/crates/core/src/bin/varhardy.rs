use clap::Parser;
use varhardy::cli::{main_with, Cli};

fn main() {
    let status = main_with(Cli::parse());
    std::process::exit(status as i32);
}
