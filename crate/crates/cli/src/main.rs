use clap::Parser;
use ghar_cli::cli::{resolve_config, Cli, Command};
use ghar_cli::{commands, service, CliError};

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    if let Err(err) = dispatch(&cli) {
        eprintln!("{}", err.to_stderr_json());
        std::process::exit(err.exit_code());
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::GenKg(args) => commands::gen_kg(args),
        Command::GenCohort(args) => commands::gen_cohort(args),
        Command::Ingest(args) => {
            let config = resolve_config(cli.config.as_ref())?;
            commands::ingest(&config, args)
        }
        Command::Index(args) => {
            let config = resolve_config(cli.config.as_ref())?;
            commands::index(&config, args)
        }
        Command::Run(args) => {
            let config = resolve_config(cli.config.as_ref())?;
            commands::run(&config, args)
        }
        Command::Eval(args) => commands::eval(args),
        Command::Score(args) => commands::score(args),
        Command::Replay(args) => commands::replay(args),
        Command::Serve(args) => {
            let config = resolve_config(cli.config.as_ref())?;
            let engine = ghar_core::engine::Engine::from_config(config)?;
            let state = service::build_state(engine)?;
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
            runtime.block_on(service::serve(state, &args.addr))
        }
    }
}
