//! Run configuration: a flat `key = value` file, overridable from the
//! command line, echoed into the run directory so any run can be recreated
//! from its artifacts.

use crate::formula::DEFAULT_WINDOWS;
use crate::metrics::BacktestMode;
use crate::trainer::TrainConfig;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value '{1}' for key '{0}'")]
    BadValue(String, String),
    #[error("malformed line {0}: expected 'key = value'")]
    MalformedLine(usize),
    #[error("config file {0}: {1}")]
    Io(PathBuf, std::io::Error),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// CSV panel to load; when absent a synthetic panel is generated.
    pub data_csv: Option<PathBuf>,
    pub days: usize,
    pub assets: usize,
    pub data_seed: u64,
    /// Formula (RPN) whose signal is planted into synthetic labels.
    pub planted: Option<String>,
    /// Label noise level; overridden by `target_ic` when set.
    pub noise_sigma: f64,
    pub target_ic: Option<f64>,
    pub out_dir: PathBuf,
    pub mode: BacktestMode,
    pub horizon: usize,
    pub cost_bps: f64,
    pub rebalance: usize,
    pub lookback: usize,
    pub top_k: usize,
    pub windows: Vec<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data_csv: None,
            days: 750,
            assets: 100,
            data_seed: 7,
            planted: None,
            noise_sigma: 0.0,
            target_ic: None,
            out_dir: PathBuf::from("run"),
            mode: BacktestMode::LongShort,
            horizon: crate::metrics::DEFAULT_HORIZON,
            cost_bps: 0.0,
            rebalance: crate::pool::DEFAULT_REBALANCE,
            lookback: crate::pool::DEFAULT_LOOKBACK,
            top_k: crate::pool::DEFAULT_TOP_K,
            windows: DEFAULT_WINDOWS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue(key.to_string(), value.to_string());
        macro_rules! parse {
            () => {
                value.trim().parse().map_err(|_| bad())?
            };
        }
        match key {
            "episodes" => self.train.episodes = parse!(),
            "max_len" => self.train.max_len = parse!(),
            "hidden" => self.train.hidden = parse!(),
            "layers" => self.train.layers = parse!(),
            "entropy_coef" => self.train.entropy_coef = parse!(),
            "lr" => self.train.lr = parse!(),
            "lambda_max" => self.train.lambda_max = parse!(),
            "eta_max" => self.train.eta_max = parse!(),
            "pool_capacity" => self.train.pool_capacity = parse!(),
            "t_anneal" => self.train.t_anneal = parse!(),
            "knn" => self.train.knn = parse!(),
            "seed" => self.train.seed = parse!(),
            "ic_min" => self.train.ic_min = parse!(),
            "nov_min" => self.train.nov_min = parse!(),
            "checkpoint_every" => self.train.checkpoint_every = parse!(),
            "data_csv" => {
                self.data_csv = match value.trim() {
                    "" | "none" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "days" => self.days = parse!(),
            "assets" => self.assets = parse!(),
            "data_seed" => self.data_seed = parse!(),
            "planted" => {
                self.planted = match value.trim() {
                    "" | "none" => None,
                    p => Some(p.to_string()),
                }
            }
            "noise_sigma" => self.noise_sigma = parse!(),
            "target_ic" => {
                self.target_ic = match value.trim() {
                    "" | "none" => None,
                    v => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "mode" => {
                self.mode = match value.trim() {
                    "long_only" => BacktestMode::LongOnly,
                    "long_short" => BacktestMode::LongShort,
                    _ => return Err(bad()),
                }
            }
            "horizon" => self.horizon = parse!(),
            "cost_bps" => self.cost_bps = parse!(),
            "rebalance" => self.rebalance = parse!(),
            "lookback" => self.lookback = parse!(),
            "top_k" => self.top_k = parse!(),
            "windows" => {
                let ws: Result<Vec<u32>, _> =
                    value.trim().split(',').map(|w| w.trim().parse()).collect();
                self.windows = ws.map_err(|_| bad())?;
                if self.windows.is_empty() {
                    return Err(bad());
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::MalformedLine(i + 1))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply `key=value` override strings (CLI `--set`).
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::BadValue("--set".into(), o.clone()))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Serialize every field in the same `key = value` syntax the loader
    /// accepts.
    pub fn echo_string(&self) -> String {
        let mut s = String::new();
        let t = &self.train;
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        kv("episodes", t.episodes.to_string());
        kv("max_len", t.max_len.to_string());
        kv("hidden", t.hidden.to_string());
        kv("layers", t.layers.to_string());
        kv("entropy_coef", t.entropy_coef.to_string());
        kv("lr", t.lr.to_string());
        kv("lambda_max", t.lambda_max.to_string());
        kv("eta_max", t.eta_max.to_string());
        kv("pool_capacity", t.pool_capacity.to_string());
        kv("t_anneal", t.t_anneal.to_string());
        kv("knn", t.knn.to_string());
        kv("seed", t.seed.to_string());
        kv("ic_min", t.ic_min.to_string());
        kv("nov_min", t.nov_min.to_string());
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv(
            "data_csv",
            self.data_csv
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        kv("days", self.days.to_string());
        kv("assets", self.assets.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("planted", self.planted.clone().unwrap_or_else(|| "none".into()));
        kv("noise_sigma", self.noise_sigma.to_string());
        kv(
            "target_ic",
            self.target_ic
                .map(|v| v.to_string())
                .unwrap_or_else(|| "none".into()),
        );
        kv("out_dir", self.out_dir.display().to_string());
        kv(
            "mode",
            match self.mode {
                BacktestMode::LongOnly => "long_only".into(),
                BacktestMode::LongShort => "long_short".into(),
            },
        );
        kv("horizon", self.horizon.to_string());
        kv("cost_bps", self.cost_bps.to_string());
        kv("rebalance", self.rebalance.to_string());
        kv("lookback", self.lookback.to_string());
        kv("top_k", self.top_k.to_string());
        kv(
            "windows",
            self.windows
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        s
    }

    pub fn echo_to(&self, path: &Path) -> Result<(), ConfigError> {
        let mut f = std::fs::File::create(path).map_err(|e| ConfigError::Io(path.into(), e))?;
        f.write_all(self.echo_string().as_bytes())
            .map_err(|e| ConfigError::Io(path.into(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_settings() {
        let c = RunConfig::default();
        assert_eq!(c.train.max_len, 20);
        assert_eq!(c.train.hidden, 128);
        assert_eq!(c.train.layers, 2);
        assert_eq!(c.train.entropy_coef, 0.01);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.lambda_max, 1.0);
        assert_eq!(c.train.eta_max, 0.3);
        assert_eq!(c.train.pool_capacity, 50);
    }

    #[test]
    fn echo_round_trips_through_the_loader() {
        let mut c = RunConfig::default();
        c.apply("episodes", "123").unwrap();
        c.apply("mode", "long_only").unwrap();
        c.apply("windows", "1, 5, 9").unwrap();
        c.apply("planted", "close 10 TsDelta").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        c.echo_to(&path).unwrap();
        let mut d = RunConfig::default();
        d.load_file(&path).unwrap();
        assert_eq!(d.train.episodes, 123);
        assert_eq!(d.mode, BacktestMode::LongOnly);
        assert_eq!(d.windows, vec![1, 5, 9]);
        assert_eq!(d.planted.as_deref(), Some("close 10 TsDelta"));
        assert_eq!(d.echo_string(), c.echo_string());
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(
            c.apply("nonsense", "1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            c.apply("episodes", "lots"),
            Err(ConfigError::BadValue(_, _))
        ));
        assert!(matches!(
            c.apply("mode", "sideways"),
            Err(ConfigError::BadValue(_, _))
        ));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.txt");
        std::fs::write(&path, "# a comment\n\nepisodes = 9 # trailing\n").unwrap();
        let mut c = RunConfig::default();
        c.load_file(&path).unwrap();
        assert_eq!(c.train.episodes, 9);
    }
}
