//! Command-line front end: reproducible runs wiring data generation,
//! mining, evaluation, combination, backtesting, and pool diagnostics.

use crate::config::{ConfigError, RunConfig};
use crate::engine::{
    evaluate, generate_synthetic, read_panel_csv, sigma_for_oracle_ic, write_panel_csv, Panel,
    Signal,
};
use crate::formula::{parse_rpn, ExprTree, Vocabulary};
use crate::metrics::{backtest, correlation_metrics, write_wealth_csv, BacktestResult};
use crate::pool::{combine_mega_alpha, read_pool_csv, variance_diagnostics, WeightSchedule};
use crate::trainer::mine;
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as FmtWrite;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "alphamine",
    about = "Mine formulaic trading alphas with a flow-matching sampler, combine them, and backtest",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// Config file (flat `key = value` lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. --set episodes=500 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory (overrides config `out_dir`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Panel CSV path (overrides config `data_csv`)
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic OHLCV panel and write it as CSV
    GenData(ConfigArgs),
    /// Run the mining loop; resumable from the run directory's checkpoint
    Mine(ConfigArgs),
    /// Per-alpha and combined metrics report for an exported pool
    Eval {
        #[command(flatten)]
        common: ConfigArgs,
        /// Pool export file (canonical RPN per line)
        #[arg(long)]
        pool: PathBuf,
    },
    /// Recombine a pool into the composite signal; export weights
    Combine {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        pool: PathBuf,
    },
    /// Backtest the pool's composite signal, or a single formula
    Backtest {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, conflicts_with = "alpha")]
        pool: Option<PathBuf>,
        /// A single formula in RPN, e.g. "close 10 TsDelta"
        #[arg(long)]
        alpha: Option<String>,
    },
    /// Pool correlation / estimator-variance report
    Diagnose {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        pool: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration: exit code 2.
    Config(String),
    /// Everything else: exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn resolve_config(common: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    cfg.apply_overrides(&common.sets)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(data) = &common.data {
        cfg.data_csv = Some(data.clone());
    }
    if cfg.days < 100 || cfg.assets < 10 {
        return Err(CliError::Config(format!(
            "synthetic panel needs days >= 100 and assets >= 10 (got {} x {})",
            cfg.days, cfg.assets
        )));
    }
    Ok(cfg)
}

fn build_vocab(cfg: &RunConfig) -> Vocabulary {
    Vocabulary::with_windows(&cfg.windows)
}

fn load_panel(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Panel, CliError> {
    if let Some(path) = &cfg.data_csv {
        return read_panel_csv(path).map_err(runtime);
    }
    let planted = cfg
        .planted
        .as_deref()
        .map(|rpn| parse_rpn(vocab, rpn))
        .transpose()
        .map_err(|e| CliError::Config(format!("planted formula: {e}")))?;
    let sigma = match cfg.target_ic {
        Some(t) if !(0.0..=1.0).contains(&t) || t == 0.0 => {
            return Err(CliError::Config(format!("target_ic {t} outside (0, 1]")))
        }
        Some(t) => sigma_for_oracle_ic(t),
        None => cfg.noise_sigma,
    };
    generate_synthetic(cfg.data_seed, cfg.days, cfg.assets, planted.as_ref(), sigma)
        .map_err(runtime)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| runtime(format!("creating {}: {e}", cfg.out_dir.display())))?;
    cfg.echo_to(&cfg.out_dir.join("config.echo"))?;
    Ok(())
}

struct NamedSignal {
    name: String,
    rpn: String,
    signal: Signal,
}

fn load_pool_signals(
    pool_path: &Path,
    vocab: &Vocabulary,
    panel: &Panel,
) -> Result<(Vec<ExprTree>, Vec<NamedSignal>), CliError> {
    let rows = read_pool_csv(pool_path).map_err(runtime)?;
    if rows.is_empty() {
        return Err(CliError::Runtime(format!(
            "pool file {} has no entries",
            pool_path.display()
        )));
    }
    let mut trees = Vec::new();
    let mut signals = Vec::new();
    for (i, (rpn, _, _)) in rows.iter().enumerate() {
        let tree = parse_rpn(vocab, rpn).map_err(|e| runtime(format!("entry {i}: {e}")))?;
        let signal = evaluate(&tree, panel).map_err(|e| runtime(format!("entry {i}: {e}")))?;
        signals.push(NamedSignal {
            name: format!("alpha{i}"),
            rpn: rpn.clone(),
            signal,
        });
        trees.push(tree);
    }
    Ok((trees, signals))
}

fn metrics_row(name: &str, rpn: &str, signal: &Signal, panel: &Panel, cfg: &RunConfig) -> String {
    let cm = correlation_metrics(signal, &panel.labels);
    let bt = backtest(panel, signal, cfg.mode, cfg.horizon, cfg.cost_bps);
    format!(
        "{name},{},{},{},{},{},{},{},\"{rpn}\"",
        cm.ic, cm.icir, cm.rank_ic, cm.rank_icir, bt.annualized_return, bt.max_drawdown, bt.sharpe
    )
}

fn metrics_text(cm: &crate::metrics::CorrelationMetrics, bt: &BacktestResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ic = {}", cm.ic);
    let _ = writeln!(s, "icir = {}", cm.icir);
    let _ = writeln!(s, "rank_ic = {}", cm.rank_ic);
    let _ = writeln!(s, "rank_icir = {}", cm.rank_icir);
    let _ = writeln!(s, "ar = {}", bt.annualized_return);
    let _ = writeln!(s, "mdd = {}", bt.max_drawdown);
    let _ = writeln!(s, "sr = {}", bt.sharpe);
    let _ = writeln!(s, "total_return = {}", bt.total_return);
    let _ = writeln!(s, "annualized_vol = {}", bt.annualized_vol);
    s
}

fn combined_signal(
    signals: &[NamedSignal],
    panel: &Panel,
    cfg: &RunConfig,
) -> Result<(Signal, WeightSchedule), CliError> {
    let refs: Vec<&Signal> = signals.iter().map(|n| &n.signal).collect();
    combine_mega_alpha(&refs, &panel.labels, cfg.rebalance, cfg.lookback, cfg.top_k)
        .map_err(runtime)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = resolve_config(&common)?;
            let vocab = build_vocab(&cfg);
            if cfg.data_csv.is_some() {
                return Err(CliError::Config(
                    "gen-data writes a synthetic panel; do not pass --data".into(),
                ));
            }
            let panel = load_panel(&cfg, &vocab)?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(runtime)?;
            cfg.echo_to(&cfg.out_dir.join("config.echo"))?;
            let path = cfg.out_dir.join("panel.csv");
            write_panel_csv(&panel, &path).map_err(runtime)?;
            println!(
                "wrote {} ({} days x {} assets)",
                path.display(),
                panel.days(),
                panel.assets_len()
            );
            Ok(())
        }
        Command::Mine(common) => {
            let cfg = resolve_config(&common)?;
            let vocab = build_vocab(&cfg);
            let panel = load_panel(&cfg, &vocab)?;
            ensure_out_dir(&cfg)?;
            let result = mine(&cfg.train, &vocab, &panel, Some(&cfg.out_dir)).map_err(runtime)?;
            let pool_path = cfg.out_dir.join("pool.csv");
            result.pool.write_csv(&pool_path).map_err(runtime)?;
            println!(
                "mined {} episodes; pool size {} (best r_ic {:.4}); artifacts in {}",
                result.episodes_run,
                result.pool.len(),
                result.pool.max_r_ic(),
                cfg.out_dir.display()
            );
            Ok(())
        }
        Command::Eval { common, pool } => {
            let cfg = resolve_config(&common)?;
            let vocab = build_vocab(&cfg);
            let panel = load_panel(&cfg, &vocab)?;
            ensure_out_dir(&cfg)?;
            let (_, signals) = load_pool_signals(&pool, &vocab, &panel)?;
            let mut report = String::from("name,IC,ICIR,RIC,RICIR,AR,MDD,SR,formula\n");
            for ns in &signals {
                report.push_str(&metrics_row(&ns.name, &ns.rpn, &ns.signal, &panel, &cfg));
                report.push('\n');
            }
            match combined_signal(&signals, &panel, &cfg) {
                Ok((mega, _)) => {
                    report.push_str(&metrics_row("mega", "(combined)", &mega, &panel, &cfg));
                    report.push('\n');
                }
                Err(e) => eprintln!("combined signal skipped: {e}"),
            }
            let path = cfg.out_dir.join("report.csv");
            std::fs::write(&path, &report).map_err(runtime)?;
            print!("{report}");
            Ok(())
        }
        Command::Combine { common, pool } => {
            let cfg = resolve_config(&common)?;
            let vocab = build_vocab(&cfg);
            let panel = load_panel(&cfg, &vocab)?;
            ensure_out_dir(&cfg)?;
            let (_, signals) = load_pool_signals(&pool, &vocab, &panel)?;
            let (mega, schedule) = combined_signal(&signals, &panel, &cfg)?;
            crate::pool::write_weights_csv(
                &cfg.out_dir.join("weights.csv"),
                &panel.dates,
                &schedule,
                signals.len(),
            )
            .map_err(runtime)?;
            let cm = correlation_metrics(&mega, &panel.labels);
            let bt = backtest(&panel, &mega, cfg.mode, cfg.horizon, cfg.cost_bps);
            write_wealth_csv(&cfg.out_dir.join("wealth.csv"), &panel.dates, &bt)
                .map_err(runtime)?;
            let text = metrics_text(&cm, &bt);
            std::fs::write(cfg.out_dir.join("metrics.txt"), &text).map_err(runtime)?;
            print!("{text}");
            Ok(())
        }
        Command::Backtest {
            common,
            pool,
            alpha,
        } => {
            let cfg = resolve_config(&common)?;
            let vocab = build_vocab(&cfg);
            let panel = load_panel(&cfg, &vocab)?;
            ensure_out_dir(&cfg)?;
            let signal = match (&pool, &alpha) {
                (Some(p), None) => {
                    let (_, signals) = load_pool_signals(p, &vocab, &panel)?;
                    combined_signal(&signals, &panel, &cfg)?.0
                }
                (None, Some(rpn)) => {
                    let tree =
                        parse_rpn(&vocab, rpn).map_err(|e| CliError::Config(e.to_string()))?;
                    evaluate(&tree, &panel).map_err(runtime)?
                }
                _ => {
                    return Err(CliError::Config(
                        "backtest needs exactly one of --pool or --alpha".into(),
                    ))
                }
            };
            let cm = correlation_metrics(&signal, &panel.labels);
            let bt = backtest(&panel, &signal, cfg.mode, cfg.horizon, cfg.cost_bps);
            write_wealth_csv(&cfg.out_dir.join("wealth.csv"), &panel.dates, &bt)
                .map_err(runtime)?;
            let text = metrics_text(&cm, &bt);
            std::fs::write(cfg.out_dir.join("metrics.txt"), &text).map_err(runtime)?;
            print!("{text}");
            Ok(())
        }
        Command::Diagnose { common, pool } => {
            let cfg = resolve_config(&common)?;
            let vocab = build_vocab(&cfg);
            let panel = load_panel(&cfg, &vocab)?;
            ensure_out_dir(&cfg)?;
            let (_, signals) = load_pool_signals(&pool, &vocab, &panel)?;
            let refs: Vec<&Signal> = signals.iter().map(|n| &n.signal).collect();
            let rep = variance_diagnostics(&refs, 1.0, panel.days()).map_err(runtime)?;
            let mut text = String::new();
            let _ = writeln!(text, "entries = {}", signals.len());
            let _ = writeln!(
                text,
                "eigenvalues = {}",
                rep.eigenvalues
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            let _ = writeln!(text, "kappa2 = {}", rep.kappa2);
            let _ = writeln!(text, "trace_variance = {}", rep.trace_variance);
            let _ = writeln!(text, "in_sample_risk = {}", rep.in_sample_risk);
            let _ = writeln!(text, "prediction_risk = {}", rep.prediction_risk);
            let _ = writeln!(text, "singular = {}", rep.singular);
            for (ns, vif) in signals.iter().zip(&rep.vif) {
                let _ = writeln!(text, "vif[{}] = {}  # {}", ns.name, vif, ns.rpn);
            }
            std::fs::write(cfg.out_dir.join("diversity.txt"), &text).map_err(runtime)?;
            print!("{text}");
            Ok(())
        }
    }
}
