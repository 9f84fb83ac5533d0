use clap::Parser;

fn main() {
    let cli = lightmamba_cli::Cli::parse();
    std::process::exit(lightmamba_cli::run(cli));
}
