use clap::Parser;

fn main() -> anyhow::Result<()> {
    let cli = hopgate::cli::Cli::parse();
    hopgate::cli::run(cli.command)?;
    Ok(())
}
