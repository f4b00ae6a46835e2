use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reflected_stable::experiment::{self, error_json, exit_code, ExperimentConfig, ExperimentKind};
use reflected_stable::{Error, Result};

#[derive(Parser)]
#[command(name = "reflected-stable", version, about = "Experiments on reflected isotropic stable processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV/JSON outputs plus a manifest.
    Run(Overrides),
    /// Print the resolved plan without running it.
    Describe(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's kind.
    #[arg(long)]
    kind: Option<String>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (all cores by default).
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config {
                    field: "--config".into(),
                    reason: format!("{}: {e}", p.display()),
                })?;
                let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config {
                    field: "<document>".into(),
                    reason: e.to_string(),
                })?;
                // Apply the seed before validation so a missing seed can come from the flag.
                if let (Some(s), Some(obj)) = (self.seed, v.as_object_mut()) {
                    obj.insert("seed".into(), s.into());
                }
                ExperimentConfig::from_json(&v.to_string())?
            }
            None => {
                let seed = self.seed.ok_or_else(|| Error::Config {
                    field: "seed".into(),
                    reason: "a seed is mandatory: pass --seed or a config with \"seed\"".into(),
                })?;
                ExperimentConfig {
                    seed: Some(seed),
                    ..Default::default()
                }
            }
        };
        if let Some(k) = &self.kind {
            cfg.kind = ExperimentKind::parse(k)?;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.threads == Some(0) {
            return Err(Error::Config {
                field: "--threads".into(),
                reason: "must be positive".into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report_error(e: &Error) {
    eprintln!("{}", serde_json::to_string_pretty(&error_json(e)).unwrap_or_else(|_| e.to_string()));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Describe(o) => match o.resolve().and_then(|c| experiment::describe(&c)) {
            Ok(lines) => {
                for l in lines {
                    println!("{l}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                report_error(&e);
                ExitCode::from(exit_code(&Err(e)) as u8)
            }
        },
        Command::Run(o) => {
            let resolved = o.resolve();
            if let (Err(e), Some(dir)) = (&resolved, &o.out) {
                let _ = std::fs::create_dir_all(dir);
                let doc = serde_json::to_vec_pretty(&error_json(e)).unwrap_or_default();
                let _ = std::fs::write(dir.join("error.json"), doc);
            }
            let result = resolved.and_then(|c| {
                let r = experiment::run_with_threads(&c, o.threads);
                if let Err(e) = &r {
                    let _ = std::fs::create_dir_all(&c.output_dir);
                    let doc = serde_json::to_vec_pretty(&error_json(e)).unwrap_or_default();
                    let _ = std::fs::write(c.output_dir.join("error.json"), doc);
                }
                r
            });
            match &result {
                Ok(out) => {
                    for c in &out.checks {
                        println!(
                            "[{}] {}: {} = {:.6e} ({} {:.3e})",
                            if c.pass { "PASS" } else { "FAIL" },
                            c.stage,
                            c.name,
                            c.value,
                            c.relation,
                            c.tolerance
                        );
                    }
                    println!(
                        "{} checks, {} failed; outputs in {} ({:.1} s)",
                        out.checks.len(),
                        out.checks.iter().filter(|c| !c.pass).count(),
                        o.out
                            .as_deref()
                            .map(|p| p.display().to_string())
                            .unwrap_or_else(|| "the configured output directory".into()),
                        out.manifest.wall_time_s
                    );
                }
                Err(e) => report_error(e),
            }
            ExitCode::from(exit_code(&result) as u8)
        }
    }
}
