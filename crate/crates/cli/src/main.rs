mod args;
mod commands;
mod config;
mod failure;

use std::process::ExitCode;

use clap::Parser;
use countseg_pipeline::ProposalConfig;

use crate::args::{Cli, Command};
use crate::config::resolve;
use crate::failure::{Failure, EXIT_USAGE};

fn run(cli: Cli) -> Result<(), Failure> {
    let file = cli.config.as_deref().map(config::load_file).transpose()?;
    let file = file.as_ref();
    let proposals: ProposalConfig = match file.and_then(|f| f.get("proposals")) {
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Failure::input(format!("config section \"proposals\": {e}")))?,
        None => ProposalConfig::default(),
    };
    match cli.command {
        Command::Count(a) => commands::count(&resolve(&a, file, "count")?),
        Command::Match(a) => commands::match_(&resolve(&a, file, "match")?, &proposals),
        Command::Eval(a) => commands::eval(&resolve(&a, file, "eval")?),
        Command::Sweep(a) => commands::sweep(&resolve(&a, file, "sweep")?),
        Command::Bench(a) => commands::bench(&resolve(&a, file, "bench")?),
        Command::Crops(a) => commands::crops(&resolve(&a, file, "crops")?, &proposals),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet {
        "warn"
    } else {
        "info"
    }))
    .format_timestamp(None)
    .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;
    use crate::commands::*;

    fn flags(sub: &str) -> Vec<String> {
        let cmd = Cli::command();
        let sc = cmd.find_subcommand(sub).unwrap();
        let mut v: Vec<String> = sc
            .get_arguments()
            .filter(|a| !a.is_global_set())
            .filter_map(|a| a.get_long().map(str::to_string))
            .filter(|l| !["help", "config", "quiet"].contains(&l.as_str()))
            .collect();
        v.sort();
        v
    }

    fn sorted(mut v: Vec<String>) -> Vec<String> {
        v.sort();
        v
    }

    #[test]
    fn config_keys_match_flags() {
        assert_eq!(flags("count"), sorted(config::keys::<CountConfig>()));
        assert_eq!(flags("match"), sorted(config::keys::<MatchConfig>()));
        assert_eq!(flags("eval"), sorted(config::keys::<EvalConfig>()));
        assert_eq!(flags("sweep"), sorted(config::keys::<SweepConfig>()));
        assert_eq!(flags("bench"), sorted(config::keys::<BenchConfig>()));
        assert_eq!(flags("crops"), sorted(config::keys::<CropsConfig>()));
    }

    #[test]
    fn flags_override_file_over_defaults() {
        let file = serde_json::json!({"sweep": {"step": 0.1, "iou": 0.7}});
        let cli = Cli::try_parse_from(["countseg", "sweep", "--iou", "0.6"]).unwrap();
        let Command::Sweep(a) = cli.command else { panic!() };
        let c: SweepConfig = resolve(&a, Some(&file), "sweep").unwrap();
        assert_eq!(c.iou, 0.6);
        assert_eq!(c.step, 0.1);
        assert_eq!(c.kind, "box");
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let file = serde_json::json!({"sweep": {"stepp": 0.1}});
        let cli = Cli::try_parse_from(["countseg", "sweep"]).unwrap();
        let Command::Sweep(a) = cli.command else { panic!() };
        assert!(resolve::<_, SweepConfig>(&a, Some(&file), "sweep").is_err());
    }

    #[test]
    fn boolean_flags() {
        let cli = Cli::try_parse_from(["countseg", "match", "--keep-going"]).unwrap();
        let Command::Match(a) = cli.command else { panic!() };
        let c: MatchConfig = resolve(&a, None, "match").unwrap();
        assert!(c.keep_going);
        let cli = Cli::try_parse_from(["countseg", "eval", "--mask", "false"]).unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        let c: EvalConfig = resolve(&a, None, "eval").unwrap();
        assert!(!c.mask);
    }
}
