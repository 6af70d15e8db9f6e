//! `key = value` experiment configuration.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use popforge::envs::EnvKind;
use popforge::OptimizerKind;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single,
    Pbt,
    Sweep,
    Grid,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Pbt => "pbt",
            Mode::Sweep => "sweep",
            Mode::Grid => "grid",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" => Ok(Mode::Single),
            "pbt" => Ok(Mode::Pbt),
            "sweep" => Ok(Mode::Sweep),
            "grid" => Ok(Mode::Grid),
            _ => Err(format!("unknown mode `{s}` (single, pbt, sweep, grid)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    None,
    Final,
    All,
}

impl Retention {
    pub fn name(self) -> &'static str {
        match self {
            Retention::None => "none",
            Retention::Final => "final",
            Retention::All => "all",
        }
    }
}

impl FromStr for Retention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Retention::None),
            "final" => Ok(Retention::Final),
            "all" => Ok(Retention::All),
            _ => Err(format!(
                "unknown checkpoint retention `{s}` (none, final, all)"
            )),
        }
    }
}

/// Ordered optimizer counts, written `adam:6,kfac:2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composition(pub Vec<(OptimizerKind, usize)>);

impl Composition {
    pub fn single(kind: OptimizerKind, n: usize) -> Self {
        Composition(vec![(kind, n)])
    }

    pub fn size(&self) -> usize {
        self.0.iter().map(|&(_, c)| c).sum()
    }

    /// Directory-safe form, e.g. `adam6-kfac2`.
    pub fn slug(&self) -> String {
        self.0
            .iter()
            .map(|(k, c)| format!("{k}{c}"))
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Rescales to `n` members by largest remainder, keeping every kind
    /// present where possible.
    pub fn scaled_to(&self, n: usize) -> Composition {
        let total = self.size() as f64;
        let mut parts: Vec<(OptimizerKind, usize, f64)> = self
            .0
            .iter()
            .map(|&(k, c)| {
                let exact = c as f64 * n as f64 / total;
                (k, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let mut left = n - parts.iter().map(|p| p.1).sum::<usize>();
        let mut order: Vec<usize> = (0..parts.len()).collect();
        order.sort_by(|&a, &b| parts[b].2.partial_cmp(&parts[a].2).unwrap().then(a.cmp(&b)));
        for i in order {
            if left == 0 {
                break;
            }
            parts[i].1 += 1;
            left -= 1;
        }
        Composition(
            parts
                .into_iter()
                .filter(|p| p.1 > 0)
                .map(|(k, c, _)| (k, c))
                .collect(),
        )
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, c)| format!("{k}:{c}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Composition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out: Vec<(OptimizerKind, usize)> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, c) = part
                .split_once(':')
                .ok_or_else(|| format!("expected kind:count, got `{part}`"))?;
            let kind: OptimizerKind = k.trim().parse().map_err(|e| format!("{e}"))?;
            let count: usize = c
                .trim()
                .parse()
                .map_err(|_| format!("bad count `{}`", c.trim()))?;
            if out.iter().any(|&(o, _)| o == kind) {
                return Err(format!("{kind} listed twice"));
            }
            if count > 0 {
                out.push((kind, count));
            }
        }
        if out.is_empty() {
            return Err("composition is empty".into());
        }
        Ok(Composition(out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub env: EnvKind,
    /// Optimizer of single-agent and grid runs.
    pub optimizer: OptimizerKind,
    pub composition: Composition,
    pub perturbation_interval: usize,
    pub intervals: usize,
    pub exploit_top_fraction: f64,
    pub exploit_bottom_fraction: f64,
    pub step_adjusted: bool,
    /// Environment steps of a single-agent or grid-cell run.
    pub train_steps: usize,
    pub eval_steps: usize,
    pub warmup_steps: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    /// Single-agent damping; defaults per optimizer when unset.
    pub damping: Option<f64>,
    pub adam_lr_range: (f64, f64),
    pub diag_ggn_lr_range: (f64, f64),
    pub kfac_lr_range: (f64, f64),
    pub batch_choices: Vec<usize>,
    pub batch_min: usize,
    pub batch_max: usize,
    pub diag_ggn_damping_range: (f64, f64),
    pub kfac_damping_range: (f64, f64),
    pub grid_lrs: Vec<f64>,
    pub grid_dampings: Vec<f64>,
    pub sweep_sizes: Vec<usize>,
    pub replay_capacity: usize,
    pub kfac_decay: f64,
    pub checkpoints: Retention,
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub exploration_noise: f64,
    /// Composition that summary deltas are measured against.
    pub baseline: Option<Composition>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pbt,
            env: EnvKind::Pendulum,
            optimizer: OptimizerKind::Adam,
            composition: Composition::single(OptimizerKind::Adam, 8),
            perturbation_interval: 10_000,
            intervals: 20,
            exploit_top_fraction: 0.2,
            exploit_bottom_fraction: 0.2,
            step_adjusted: false,
            train_steps: 100_000,
            eval_steps: 20_000,
            warmup_steps: 1_000,
            seeds: Vec::new(),
            out_dir: PathBuf::from("runs"),
            hidden: vec![64, 64],
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            batch_size: 256,
            damping: None,
            adam_lr_range: (1e-4, 1e-3),
            diag_ggn_lr_range: (1e-4, 1e-3),
            kfac_lr_range: (1e-4, 1e-3),
            batch_choices: vec![128, 256],
            batch_min: 64,
            batch_max: 512,
            diag_ggn_damping_range: (1e-3, 1.0),
            kfac_damping_range: (1.0, 10.0),
            grid_lrs: vec![1e-4, 3e-4, 1e-3],
            grid_dampings: vec![0.1, 1.0, 10.0],
            sweep_sizes: vec![4, 8, 16],
            replay_capacity: 200_000,
            kfac_decay: 0.95,
            checkpoints: Retention::Final,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            exploration_noise: 0.1,
            baseline: None,
        }
    }
}

/// Every key with its default and meaning, for `--help`.
pub const KEYS: &[(&str, &str)] = &[
    (
        "mode",
        "single | pbt | sweep | grid (default pbt; subcommands override)",
    ),
    ("env", "point_mass | pendulum (default pendulum)"),
    (
        "optimizer",
        "adam | diag_ggn | kfac, for single and grid runs (default adam)",
    ),
    (
        "composition",
        "kind:count list, e.g. adam:6,kfac:2 (default adam:<population_size>)",
    ),
    (
        "population_size",
        "members; must equal the composition total (default 8)",
    ),
    (
        "perturbation_interval",
        "environment steps between exploit rounds (default 10000)",
    ),
    ("intervals", "number of PBT intervals (default 20)"),
    ("exploit_top_fraction", "source quantile (default 0.2)"),
    (
        "exploit_bottom_fraction",
        "destination quantile (default 0.2)",
    ),
    (
        "step_adjusted",
        "true: Adam/Diag-GGN/K-FAC update on 1, 1/2, 3/10 of steps (default false)",
    ),
    (
        "train_steps",
        "single-agent and grid budget in environment steps (default 100000)",
    ),
    (
        "eval_steps",
        "deterministic evaluation steps (default 20000)",
    ),
    (
        "warmup_steps",
        "random-action steps before learning (default 1000)",
    ),
    (
        "seeds",
        "comma-separated seeds (default 0..10 for single/grid, 0..5 for pbt/sweep)",
    ),
    ("out_dir", "output directory (default runs)"),
    ("hidden", "hidden widths, e.g. 64,64 (default 64,64)"),
    (
        "lr_actor",
        "single-agent actor learning rate (default 0.001)",
    ),
    (
        "lr_critic",
        "single-agent critic learning rate (default 0.001)",
    ),
    (
        "batch_size",
        "single-agent and grid batch size (default 256)",
    ),
    (
        "damping",
        "single-agent damping (default 0.1 Diag-GGN, 1 K-FAC)",
    ),
    (
        "adam_lr_range",
        "PBT initial learning-rate range lo,hi (default 0.0001,0.001)",
    ),
    ("diag_ggn_lr_range", "(default 0.0001,0.001)"),
    ("kfac_lr_range", "(default 0.0001,0.001)"),
    ("batch_choices", "PBT initial batch sizes (default 128,256)"),
    ("batch_min", "perturbation lower clamp (default 64)"),
    ("batch_max", "perturbation upper clamp (default 512)"),
    (
        "diag_ggn_damping_range",
        "PBT initial damping range (default 0.001,1)",
    ),
    (
        "kfac_damping_range",
        "PBT initial damping range (default 1,10)",
    ),
    (
        "grid_lrs",
        "grid learning rates (default 0.0001,0.0003,0.001)",
    ),
    ("grid_dampings", "grid damping values (default 0.1,1,10)"),
    (
        "sweep_sizes",
        "population sizes for sweep mode (default 4,8,16)",
    ),
    (
        "replay_capacity",
        "transitions kept per agent (default 200000)",
    ),
    (
        "kfac_decay",
        "Kronecker factor moving-average decay (default 0.95)",
    ),
    ("checkpoints", "none | final | all (default final)"),
    ("gamma", "discount (default 0.99)"),
    ("tau", "target update rate (default 0.005)"),
    (
        "policy_delay",
        "critic updates per actor update (default 2)",
    ),
    (
        "target_noise",
        "target smoothing noise, fraction of action bound (default 0.2)",
    ),
    (
        "noise_clip",
        "target noise clip, fraction of action bound (default 0.5)",
    ),
    (
        "exploration_noise",
        "behaviour noise, fraction of action bound (default 0.1)",
    ),
    (
        "baseline",
        "composition that summary deltas compare against (default none)",
    ),
];

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| format!("cannot parse `{s}`")))
        .collect()
}

fn parse_range(v: &str) -> Result<(f64, f64), String> {
    match parse_list::<f64>(v)?.as_slice() {
        &[lo, hi] if lo > 0.0 && lo <= hi => Ok((lo, hi)),
        _ => Err(format!("expected lo,hi with 0 < lo <= hi, got `{v}`")),
    }
}

fn parse_scalar<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut population_size: Option<(usize, usize)> = None;
        let mut composition_line: Option<usize> = None;
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Line { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS
                .iter()
                .find(|(k, _)| *k == key)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if seen.contains(&known.0) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(known.0);
            cfg.set(key, value)
                .map_err(|m| err(format!("{key}: {m}")))?;
            match key {
                "population_size" => {
                    population_size = Some((parse_scalar(value).map_err(err)?, line))
                }
                "composition" => composition_line = Some(line),
                _ => {}
            }
        }
        match (population_size, composition_line) {
            (Some((n, line)), Some(_)) if n != cfg.composition.size() => {
                return Err(ConfigError::Line {
                    line,
                    message: format!(
                        "population_size {n} != composition total {} ({})",
                        cfg.composition.size(),
                        cfg.composition
                    ),
                })
            }
            (Some((n, _)), None) => cfg.composition = Composition::single(OptimizerKind::Adam, n),
            _ => {}
        }
        if cfg.seeds.is_empty() {
            cfg.seeds = cfg.default_seeds();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "mode" => self.mode = v.parse()?,
            "env" => self.env = v.parse().map_err(|e| format!("{e}"))?,
            "optimizer" => self.optimizer = v.parse().map_err(|e| format!("{e}"))?,
            "composition" => self.composition = v.parse()?,
            "population_size" => {
                let n: usize = parse_scalar(v)?;
                if n == 0 {
                    return Err("must be > 0".into());
                }
            }
            "perturbation_interval" => self.perturbation_interval = parse_scalar(v)?,
            "intervals" => self.intervals = parse_scalar(v)?,
            "exploit_top_fraction" => self.exploit_top_fraction = parse_scalar(v)?,
            "exploit_bottom_fraction" => self.exploit_bottom_fraction = parse_scalar(v)?,
            "step_adjusted" => self.step_adjusted = parse_scalar(v)?,
            "train_steps" => self.train_steps = parse_scalar(v)?,
            "eval_steps" => self.eval_steps = parse_scalar(v)?,
            "warmup_steps" => self.warmup_steps = parse_scalar(v)?,
            "seeds" => self.seeds = parse_list(v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "hidden" => self.hidden = parse_list(v)?,
            "lr_actor" => self.lr_actor = parse_scalar(v)?,
            "lr_critic" => self.lr_critic = parse_scalar(v)?,
            "batch_size" => self.batch_size = parse_scalar(v)?,
            "damping" => {
                self.damping = if v == "none" {
                    None
                } else {
                    Some(parse_scalar(v)?)
                }
            }
            "adam_lr_range" => self.adam_lr_range = parse_range(v)?,
            "diag_ggn_lr_range" => self.diag_ggn_lr_range = parse_range(v)?,
            "kfac_lr_range" => self.kfac_lr_range = parse_range(v)?,
            "batch_choices" => self.batch_choices = parse_list(v)?,
            "batch_min" => self.batch_min = parse_scalar(v)?,
            "batch_max" => self.batch_max = parse_scalar(v)?,
            "diag_ggn_damping_range" => self.diag_ggn_damping_range = parse_range(v)?,
            "kfac_damping_range" => self.kfac_damping_range = parse_range(v)?,
            "grid_lrs" => self.grid_lrs = parse_list(v)?,
            "grid_dampings" => self.grid_dampings = parse_list(v)?,
            "sweep_sizes" => self.sweep_sizes = parse_list(v)?,
            "replay_capacity" => self.replay_capacity = parse_scalar(v)?,
            "kfac_decay" => self.kfac_decay = parse_scalar(v)?,
            "checkpoints" => self.checkpoints = v.parse()?,
            "gamma" => self.gamma = parse_scalar(v)?,
            "tau" => self.tau = parse_scalar(v)?,
            "policy_delay" => self.policy_delay = parse_scalar(v)?,
            "target_noise" => self.target_noise = parse_scalar(v)?,
            "noise_clip" => self.noise_clip = parse_scalar(v)?,
            "exploration_noise" => self.exploration_noise = parse_scalar(v)?,
            "baseline" => self.baseline = if v == "none" { None } else { Some(v.parse()?) },
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn default_seeds(&self) -> Vec<u64> {
        match self.mode {
            Mode::Single | Mode::Grid => (0..10).collect(),
            Mode::Pbt | Mode::Sweep => (0..5).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return fail("seed list is empty".into());
        }
        if self.perturbation_interval == 0 || self.intervals == 0 {
            return fail("perturbation_interval and intervals must be > 0".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail("hidden widths must be non-empty and positive".into());
        }
        if self.batch_choices.is_empty() {
            return fail("batch_choices is empty".into());
        }
        if self.batch_min > self.batch_max {
            return fail("batch_min > batch_max".into());
        }
        if self.sweep_sizes.contains(&0) {
            return fail("sweep sizes must be positive".into());
        }
        if self.mode == Mode::Grid && (self.grid_lrs.is_empty() || self.grid_dampings.is_empty()) {
            return fail("grid mode needs grid_lrs and grid_dampings".into());
        }
        if self.eval_steps == 0 {
            return fail("eval_steps must be > 0".into());
        }
        Ok(())
    }

    /// Canonical text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let range = |r: (f64, f64)| format!("{},{}", r.0, r.1);
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("mode", self.mode.name().into());
        put("env", self.env.name().into());
        put("optimizer", self.optimizer.name().into());
        put("composition", self.composition.to_string());
        put("population_size", self.composition.size().to_string());
        put(
            "perturbation_interval",
            self.perturbation_interval.to_string(),
        );
        put("intervals", self.intervals.to_string());
        put(
            "exploit_top_fraction",
            self.exploit_top_fraction.to_string(),
        );
        put(
            "exploit_bottom_fraction",
            self.exploit_bottom_fraction.to_string(),
        );
        put("step_adjusted", self.step_adjusted.to_string());
        put("train_steps", self.train_steps.to_string());
        put("eval_steps", self.eval_steps.to_string());
        put("warmup_steps", self.warmup_steps.to_string());
        put("seeds", join(&self.seeds));
        put("out_dir", self.out_dir.display().to_string());
        put("hidden", join(&self.hidden));
        put("lr_actor", self.lr_actor.to_string());
        put("lr_critic", self.lr_critic.to_string());
        put("batch_size", self.batch_size.to_string());
        put(
            "damping",
            self.damping.map_or("none".into(), |d| d.to_string()),
        );
        put("adam_lr_range", range(self.adam_lr_range));
        put("diag_ggn_lr_range", range(self.diag_ggn_lr_range));
        put("kfac_lr_range", range(self.kfac_lr_range));
        put("batch_choices", join(&self.batch_choices));
        put("batch_min", self.batch_min.to_string());
        put("batch_max", self.batch_max.to_string());
        put("diag_ggn_damping_range", range(self.diag_ggn_damping_range));
        put("kfac_damping_range", range(self.kfac_damping_range));
        put("grid_lrs", join(&self.grid_lrs));
        put("grid_dampings", join(&self.grid_dampings));
        put("sweep_sizes", join(&self.sweep_sizes));
        put("replay_capacity", self.replay_capacity.to_string());
        put("kfac_decay", self.kfac_decay.to_string());
        put("checkpoints", self.checkpoints.name().into());
        put("gamma", self.gamma.to_string());
        put("tau", self.tau.to_string());
        put("policy_delay", self.policy_delay.to_string());
        put("target_noise", self.target_noise.to_string());
        put("noise_clip", self.noise_clip.to_string());
        put("exploration_noise", self.exploration_noise.to_string());
        put(
            "baseline",
            self.baseline
                .as_ref()
                .map_or("none".into(), |b| b.to_string()),
        );
        s
    }

    pub fn help_text() -> String {
        let mut s = String::from("Config keys (`key = value`, `#` comments):\n");
        for (k, d) in KEYS {
            let _ = writeln!(s, "  {k:<24} {d}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_and_composition() {
        let c = ExperimentConfig::parse("population_size = 8\n").unwrap();
        assert_eq!(c.composition.size(), 8);
        let c = ExperimentConfig::parse("composition = adam:6,kfac:2  # mixed\n").unwrap();
        assert_eq!(
            c.composition,
            Composition(vec![(OptimizerKind::Adam, 6), (OptimizerKind::Kfac, 2)])
        );
    }

    #[test]
    fn composition_must_match_size() {
        let err = ExperimentConfig::parse("composition = adam:5,kfac:2\npopulation_size = 8\n")
            .unwrap_err();
        assert!(matches!(err, ConfigError::Line { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_keys_name_their_line() {
        let err = ExperimentConfig::parse("# header\n\nlearning_rate = 3\n").unwrap_err();
        assert_eq!(err.to_string(), "line 3: unknown key `learning_rate`");
        let err = ExperimentConfig::parse("intervals = many\n").unwrap_err();
        assert!(err.to_string().starts_with("line 1: intervals"));
    }

    #[test]
    fn default_seed_counts() {
        assert_eq!(
            ExperimentConfig::parse("mode = single")
                .unwrap()
                .seeds
                .len(),
            10
        );
        assert_eq!(
            ExperimentConfig::parse("mode = pbt").unwrap().seeds.len(),
            5
        );
    }

    #[test]
    fn round_trip() {
        let text = "mode = grid\nenv = point_mass\ncomposition = diag_ggn:2,kfac:2\nseeds = 3,4\ndamping = 0.25\nbaseline = adam:4\nkfac_lr_range = 0.01,0.3\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn scaling_compositions() {
        let c: Composition = "adam:6,kfac:2".parse().unwrap();
        assert_eq!(c.scaled_to(4).to_string(), "adam:3,kfac:1");
        assert_eq!(c.scaled_to(16).to_string(), "adam:12,kfac:4");
        assert_eq!(c.scaled_to(8), c);
    }
}
