use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dgrmil::commands;
use dgrmil::config::{DataFormat, RunConfig};
use dgrmil::dgrmil_core::data::SyntheticSpec;
use dgrmil::dgrmil_core::diversity::{RateConfig, RateUnit};
use dgrmil::reports::{HeadSelect, RowSelect};
use dgrmil::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "dgrmil", version, about = "Multiple instance learning with diverse global representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(f) = &self.format {
            cfg.format = f.parse()?;
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
            cfg.train.lr_warmup_epochs = cfg.train.lr_warmup_epochs.min(e);
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes history.csv, params.bin and config.resolved.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Validation data for model selection.
        #[arg(long)]
        val_data: Option<PathBuf>,
    },
    /// Score a dataset with saved params; writes scores.csv and metrics.csv.
    Eval {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Export per-instance attention as bag_id,instance_id,score.
    AttnExport {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Head index or `mean`.
        #[arg(long, default_value = "mean")]
        head: String,
        /// `token` or `global:<k>` with k in 1..=K.
        #[arg(long, default_value = "token")]
        which: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Coding rates and pairwise rate reduction of positive-instance sets.
    Diversity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long, default_value_t = 0.25)]
        epsilon_sq: f64,
        /// `nats` or `bits`.
        #[arg(long, default_value = "nats")]
        unit: String,
        /// Also report the Gram similarity of these params' global vectors.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Generate a synthetic diverse-bag dataset as canonical CSV.
    Synth {
        #[arg(long, default_value_t = 50)]
        n_pos: usize,
        #[arg(long, default_value_t = 50)]
        n_neg: usize,
        /// Instances per bag, `N` or `LO:HI`.
        #[arg(long, default_value = "100")]
        instances: String,
        #[arg(long, default_value_t = 10)]
        feature_dim: usize,
        #[arg(long, default_value_t = 3)]
        clusters: usize,
        #[arg(long, default_value_t = 0.05)]
        pos_fraction: f64,
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and multiply-accumulate counts per stage.
    Footprint {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 1024)]
        input_dim: usize,
        /// Instances per bag.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Comma-separated instance counts; prints one column per count.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
    },
    /// Repeated stratified k-fold cross-validation.
    Cv {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn parse_instances(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Config(format!("instances {s:?} is not N or LO:HI"));
    match s.split_once(':') {
        Some((lo, hi)) => Ok((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?)),
        None => {
            let n = s.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Train { run, val_data } => {
            let mut cfg = run.resolve()?;
            if val_data.is_some() {
                cfg.val_data = val_data;
            }
            let r = commands::cmd_train(&cfg)?;
            let last = r.outcome.history.last();
            println!(
                "trained {} epochs; best epoch {}; final loss {}",
                r.outcome.history.len(),
                r.outcome.best_epoch.map_or_else(|| "-".into(), |e| e.to_string()),
                last.map_or_else(|| "-".into(), |h| format!("{:.6}", h.loss_total)),
            );
            println!("wrote {}", r.out_dir.display());
        }
        Command::Eval { params, data, format, out_dir } => {
            let m = commands::cmd_eval(&params, &data, format.parse()?, &out_dir)?;
            let auc = m.auc.map_or_else(|| "n/a".into(), |a| format!("{a:.6}"));
            println!("accuracy {:.6} f1 {:.6} auc {auc}", m.accuracy, m.f1);
        }
        Command::AttnExport { params, data, format, head, which, out } => {
            let head: HeadSelect = head.parse()?;
            let row: RowSelect = which.parse()?;
            let rows = commands::cmd_attn_export(&params, &data, format.parse()?, head, row, &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Diversity { data, format, epsilon_sq, unit, params, out_dir } => {
            let unit = match unit.as_str() {
                "nats" => RateUnit::Nats,
                "bits" => RateUnit::Bits,
                other => return Err(CliError::Config(format!("unit {other:?} is not nats or bits"))),
            };
            let rate = RateConfig { epsilon_sq, unit };
            let format: DataFormat = format.parse()?;
            let report = commands::cmd_diversity(&data, format, rate, params.as_deref(), &out_dir)?;
            println!(
                "epsilon_sq {epsilon_sq}: {} bag rates, {} positive sets; wrote {}",
                report.per_bag_rates.len(),
                report.positive_bags.len(),
                out_dir.display()
            );
        }
        Command::Synth { n_pos, n_neg, instances, feature_dim, clusters, pos_fraction, separation, seed, out } => {
            let spec = SyntheticSpec {
                n_pos_bags: n_pos,
                n_neg_bags: n_neg,
                instances_per_bag: parse_instances(&instances)?,
                feature_dim,
                n_pos_clusters: clusters,
                pos_fraction,
                cluster_separation: separation,
                seed,
            };
            let d = commands::cmd_synth(&spec, &out)?;
            let (neg, pos) = d.class_counts();
            println!("{} bags ({pos} positive, {neg} negative), {} instances -> {}", d.len(), d.instance_count(), out.display());
        }
        Command::Footprint { config, overrides, input_dim, n, sweep } => {
            let mut cfg = match &config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            cfg.apply_overrides(&overrides)?;
            let model = cfg.train.model_config(input_dim);
            let ns = sweep.unwrap_or_else(|| vec![n]);
            let table = commands::cmd_footprint(&model, &ns)?;
            println!(
                "D {} L {} K {} H {} params {}",
                model.input_dim, model.embed_dim, model.num_globals, model.num_heads, table[0].1.params
            );
            print!("{:<20}", "stage \\ n");
            for (n, _) in &table {
                print!(" {n:>16}");
            }
            println!();
            for (i, (stage, _)) in table[0].1.stages.iter().enumerate() {
                print!("{stage:<20}");
                for (_, f) in &table {
                    print!(" {:>16}", f.stages[i].1);
                }
                println!();
            }
            print!("{:<20}", "total_macs");
            for (_, f) in &table {
                print!(" {:>16}", f.macs);
            }
            println!();
        }
        Command::Cv { run, folds, repeats } => {
            let mut cfg = run.resolve()?;
            if let Some(k) = folds {
                cfg.folds = k;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            let cv = commands::cmd_cv(&cfg)?;
            let auc = cv.auc.map_or_else(|| "n/a".into(), |a| format!("{:.4} ± {:.4}", a.mean, a.std));
            println!(
                "{} x {}-fold: accuracy {:.4} ± {:.4} f1 {:.4} ± {:.4} auc {auc}",
                cfg.repeats, cfg.folds, cv.accuracy.mean, cv.accuracy.std, cv.f1.mean, cv.f1.std
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        // Usage errors are configuration errors.
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
