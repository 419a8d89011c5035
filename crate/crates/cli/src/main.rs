use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppcef::experiment::{
    cmd_ablate_lambda, cmd_ablate_loss, cmd_compare_density, cmd_export_trajectory, cmd_run,
    DatasetSource, Estimator, ExperimentRecord, Method, RunConfig, AGGREGATED,
};
use ppcef::Error;

#[derive(Parser)]
#[command(name = "ppcef", version, about = "Probabilistically plausible counterfactual explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validated counterfactual generation and evaluation.
    Run(Common),
    /// Sweep the penalty weight on the same trained folds.
    AblateLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
        lambdas: Vec<f64>,
    },
    /// Hinge validity loss against cross-entropy.
    AblateLoss(Common),
    /// Write the optimization path of one instance from a finished run.
    ExportTrajectory {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        instance: usize,
    },
    /// Held-out log-likelihood of MAF, KDE and GMM.
    CompareDensity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "maf,kde,gmm")]
        estimators: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `ppcef` or `wachter`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// `moons`, `blobs`, or a CSV path.
    #[arg(long)]
    dataset: Option<String>,
    /// Label column for CSV datasets.
    #[arg(long)]
    label_column: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(method) = &self.method {
            cfg.method = method.parse()?;
        }
        if let Some(lambda) = self.lambda {
            cfg.cf.lambda = lambda;
        }
        if let Some(spec) = &self.dataset {
            cfg.dataset = DatasetSource::parse(spec, self.label_column.as_deref());
        } else if let (Some(label), DatasetSource::Csv { label_column, .. }) =
            (&self.label_column, &mut cfg.dataset)
        {
            *label_column = label.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_record(label: &str, record: &ExperimentRecord) {
    println!("{label} ({} on {}, config {})", method_name(record.method), record.dataset, &record.config_hash[..12]);
    for (name, _) in AGGREGATED {
        if let Some(s) = record.aggregate.get(name) {
            match s.std {
                Some(std) => println!("  {name:<18} {:>12.4} ± {std:.4}", s.mean),
                None => println!("  {name:<18} {:>12.4}", s.mean),
            }
        }
    }
    for f in &record.folds {
        if let Some(e) = &f.error {
            println!("  fold {} failed: {e}", f.fold);
        }
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Ppcef => "ppcef",
        Method::Wachter => "wachter",
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let record = cmd_run(&cfg)?;
            print_record("run", &record);
            println!("wrote {}", cfg.out.display());
        }
        Command::AblateLambda { common, lambdas } => {
            let cfg = common.resolve()?;
            for (lambda, record) in cmd_ablate_lambda(&cfg, &lambdas)? {
                print_record(&format!("lambda = {lambda}"), &record);
            }
            println!("wrote {}", cfg.out.join("ablate_lambda.csv").display());
        }
        Command::AblateLoss(common) => {
            let cfg = common.resolve()?;
            for (variant, record) in cmd_ablate_loss(&cfg)? {
                print_record(&format!("validity loss {variant:?}"), &record);
            }
            println!("wrote {}", cfg.out.join("ablate_loss.csv").display());
        }
        Command::ExportTrajectory {
            common,
            fold,
            instance,
        } => {
            let cfg = common.resolve()?;
            let export = cmd_export_trajectory(&cfg, fold, instance)?;
            println!("wrote {} ({} points)", export.trajectory_csv.display(), export.points);
            if let Some(grid) = export.grid_csv {
                println!("wrote {}", grid.display());
            }
        }
        Command::CompareDensity { common, estimators } => {
            let cfg = common.resolve()?;
            let estimators = estimators
                .iter()
                .map(|s| s.trim().parse::<Estimator>())
                .collect::<Result<Vec<_>, _>>()?;
            let cmp = cmd_compare_density(&cfg, &estimators)?;
            for (e, s) in cmp.estimators.iter().zip(&cmp.summary) {
                match s {
                    Some(s) => println!("  {:<4} {:>10.4} ± {:.4}", e.name(), s.mean, s.std.unwrap_or(0.0)),
                    None => println!("  {:<4} failed", e.name()),
                }
            }
            println!("wrote {}", cfg.out.join("compare_density.csv").display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::AllFoldsFailed { .. } => 3,
        Error::Io(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
