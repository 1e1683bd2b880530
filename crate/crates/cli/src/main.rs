use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attnguide::ablate::ComponentKind;
use attnguide::seq2seq::Mode;
use attnguide::taskgen::{Split, SplitConfig};
use attnguide_cli::commands::{self, AnalyzeInputs, AnalyzeWhat};
use attnguide_cli::config::ExperimentConfig;
use attnguide_cli::{resolve_out, CliError};

/// Attention-guided vs baseline seq2seq models on lookup-table composition.
///
/// Flags override values from `--config`; without `--out`, outputs go to
/// `$ATTNGUIDE_OUT/<command>` or `runs/<command>`.
#[derive(Parser)]
#[command(name = "attnguide", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate tables and the five splits.
    GenData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model and write its best checkpoint and history.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `ag` or `baseline`.
        #[arg(long)]
        mode: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sequence accuracy of a checkpoint per split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split names (train, hi, hc, ht, nc); all when omitted.
        #[arg(long, value_delimiter = ',')]
        split: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Capture activation traces on every split.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Weight and activation analyses.
    Analyze {
        /// heatmap, graph, saturation, dists, probe-table, probe-timestep or probe-gate.
        #[arg(long)]
        what: String,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        tensor: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Implant frozen donor components into a host and retrain the host.
    Swap {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        donor: PathBuf,
        /// Component names, comma separated, or `all`.
        #[arg(long, value_delimiter = ',')]
        component: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        seeds: Vec<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep only the strongest units, then retrain with the mask enforced.
    Prune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        keep_frac: Option<f64>,
        #[arg(long)]
        retrain_epochs: Option<usize>,
        /// Allow a keep fraction of zero.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline into one report directory.
    Reproduce {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default experiment config as JSON.
    DefaultConfig,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn parse_mode(s: &str) -> Result<Mode, CliError> {
    Mode::parse(s).ok_or_else(|| CliError::Input(format!("unknown mode {s:?} (expected ag or baseline)")))
}

fn print_accuracies(acc: &std::collections::BTreeMap<String, f64>) {
    for s in Split::ALL {
        if let Some(v) = acc.get(s.short()) {
            println!("{:<6} {v:.4}", s.short());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { seed, out } => {
            let out = resolve_out(out, "data");
            commands::gen_data(seed, SplitConfig::default(), &out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { config, mode, seed, data, out } => {
            let cfg = load_config(config.as_deref())?;
            let mode = parse_mode(&mode)?;
            let out = resolve_out(out, &format!("train/{}-s{seed}", mode.tag()));
            let rec = commands::train_model(&cfg, mode, seed, &data, &out)?;
            println!("best epoch {} of {}", rec.best_epoch, rec.epochs_run);
            print_accuracies(&rec.accuracies);
        }
        Command::Eval { checkpoint, data, split, out } => {
            let splits = if split.is_empty() {
                Split::ALL.to_vec()
            } else {
                split.iter().map(|s| Split::parse(s).ok_or_else(|| CliError::Input(format!("unknown split {s:?}")))).collect::<Result<_, _>>()?
            };
            let acc = commands::eval_model(&checkpoint, &data, &splits, out.as_deref())?;
            print_accuracies(&acc);
        }
        Command::Trace { checkpoint, data, out } => {
            let out = resolve_out(out, "traces");
            let set = commands::trace_model(&checkpoint, &data, &out)?;
            println!("wrote {} traces to {}", set.traces.len(), out.display());
        }
        Command::Analyze { what, traces, checkpoint, data, tensor, threshold, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let what = AnalyzeWhat::parse(&what).ok_or_else(|| CliError::Input(format!("unknown analysis {what:?}")))?;
            let out = resolve_out(out, &format!("analyze/{}", what.tag()));
            let inputs = AnalyzeInputs { traces, checkpoint, data, tensor, threshold };
            let res = commands::analyze(what, &inputs, &cfg.analysis, &out)?;
            for (t, th, n, f) in &res.graphs {
                println!("{t} threshold {th}: {n} edges, kept {f:.4}");
            }
            for (l, g, _, r, lft) in &res.saturation {
                println!("{l} {g}: right-saturated units {r:.3}, left-saturated units {lft:.3}");
            }
            for r in &res.probes {
                println!("{}: accuracy {:.3}, group of {} at {:.3}", r.task, r.full_accuracy, r.group_size, r.group_accuracy);
            }
            println!("wrote {}", out.display());
        }
        Command::Swap { host, donor, component, seeds, data, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let kinds: Vec<ComponentKind> = if component.is_empty() || component.iter().any(|c| c == "all") {
                ComponentKind::ALL.to_vec()
            } else {
                component.iter().map(|c| ComponentKind::parse(c).ok_or_else(|| CliError::Input(format!("unknown component {c:?}")))).collect::<Result<_, _>>()?
            };
            let out = resolve_out(out, "swap");
            for r in commands::swap(&cfg, &host, &donor, &kinds, &seeds, &data, &out)? {
                match (&r.error, r.accuracies.get("nc")) {
                    (Some(e), _) => println!("{} seed {}: {e}", r.component, r.seed),
                    (None, nc) => println!("{} seed {}: nc {:.4}", r.component, r.seed, nc.copied().unwrap_or(f64::NAN)),
                }
            }
        }
        Command::Prune { checkpoint, data, keep_frac, retrain_epochs, force, seed, config, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = retrain_epochs {
                cfg.prune.retrain_epochs = e;
            }
            let keep = keep_frac.unwrap_or(cfg.prune.keep_frac);
            let out = resolve_out(out, "prune");
            let r = commands::prune(&cfg, &checkpoint, &data, keep, force, seed, &out)?;
            let nc = |m: &std::collections::BTreeMap<String, f64>| m.get("nc").copied().unwrap_or(f64::NAN);
            println!("kept units {:?}", r.kept_units);
            println!("nc before {:.4}, pruned {:.4}, retrained {:.4}; mask intact: {}", nc(&r.before), nc(&r.pruned), nc(&r.retrained), r.mask_intact);
        }
        Command::Reproduce { config, seeds, threads, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            let out = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| resolve_out(None, "reproduce"));
            let summary = commands::reproduce(&cfg, &out)?;
            print!("{}", attnguide_cli::report::accuracy_summary_csv(&summary.models));
            println!("report in {}", out.join("report").display());
        }
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
