//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::off_policy::TrustRegionConfig;

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: i as u64 + 1,
                msg: format!("expected key=value, found `{line}`"),
            });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Parse {
                line: i as u64 + 1,
                msg: "empty key".into(),
            });
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: i as u64 + 1,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    Plain,
    Pgr,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "on" => Ok(Mode::On),
            "off" => Ok(Mode::Off),
            _ => Err(format!("expected `on` or `off`, got `{s}`")),
        }
    }
}

impl Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::On => "on",
            Mode::Off => "off",
        })
    }
}

impl FromStr for Distance {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "plain" => Ok(Distance::Plain),
            "pgr" => Ok(Distance::Pgr),
            _ => Err(format!("expected `plain` or `pgr`, got `{s}`")),
        }
    }
}

impl Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Distance::Plain => "plain",
            Distance::Pgr => "pgr",
        })
    }
}

/// Every tunable of a run. Defaults are listed next to each field.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `1`, or `SETPOOL_SEED` when set.
    pub seed: u64,
    /// Synthetic data, used when `data` is unset.
    pub synthetic: SyntheticConfig,
    /// Embedding CSV to load instead of generating.
    pub data: Option<PathBuf>,
    /// Share of identities held out for evaluation: `0.5`.
    pub test_fraction: f64,
    /// `64`
    pub trunk_widths: Vec<usize>,
    /// Hidden widths of the reward head; empty (linear) by default.
    pub head_hidden: Vec<usize>,
    /// Trunk also sees the elementwise product of the state halves: `true`.
    pub interaction: bool,
    /// `0.9`
    pub gamma: f64,
    /// `0.01`
    pub lambda: f64,
    pub trust: TrustRegionConfig,
    /// `0.02`
    pub lr_pi: f64,
    /// `0.02`
    pub lr_v: f64,
    /// `0.1`
    pub lr_head: f64,
    /// `0` (plain SGD)
    pub momentum: f64,
    /// Global-norm cap per update direction, `0` disables: `5`.
    pub max_grad_norm: f64,
    /// `5000`
    pub capacity: usize,
    /// `16`
    pub minibatch: usize,
    /// Episodes collected before the first replay update: `32`.
    pub warmup: usize,
    /// Replayed minibatches per collected episode: `1`.
    pub replay_ratio: usize,
    /// Also fit the reward head on replayed final aggregates: `true`.
    pub head_replay: bool,
    /// `2000`; `0` keeps the untrained model.
    pub episodes: usize,
    /// `on`
    pub mode: Mode,
    /// `plain`
    pub distance: Distance,
    /// `run`
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            synthetic: SyntheticConfig::default(),
            data: None,
            test_fraction: 0.5,
            trunk_widths: vec![64],
            head_hidden: vec![],
            interaction: true,
            gamma: 0.9,
            lambda: 0.01,
            trust: TrustRegionConfig::default(),
            lr_pi: 0.02,
            lr_v: 0.02,
            lr_head: 0.1,
            momentum: 0.0,
            max_grad_norm: 5.0,
            capacity: 5000,
            minibatch: 16,
            warmup: 32,
            replay_ratio: 1,
            head_replay: true,
            episodes: 2000,
            mode: Mode::On,
            distance: Distance::Plain,
            out: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(vec![]);
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults, with the seed taken from `SETPOOL_SEED` when present.
    pub fn from_env() -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var("SETPOOL_SEED") {
            cfg.seed = parse("SETPOOL_SEED", v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synthetic;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "ids" => s.num_identities = parse(key, value)?,
            "sets_per_id" => s.sets_per_identity = parse(key, value)?,
            "set_size_min" => s.set_size_min = parse(key, value)?,
            "set_size_max" => s.set_size_max = parse(key, value)?,
            "dim" => s.dim = parse(key, value)?,
            "noise" => s.noise_scale = parse(key, value)?,
            "outlier_rate" => s.outlier_rate = parse(key, value)?,
            "profile_rate" => s.profile_rate = parse(key, value)?,
            "pose_shift" => s.pose_shift_scale = parse(key, value)?,
            "data" => self.data = (!value.is_empty()).then(|| PathBuf::from(value)),
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "trunk_widths" => self.trunk_widths = parse_list(key, value)?,
            "head_hidden" => self.head_hidden = parse_list(key, value)?,
            "interaction" => self.interaction = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "xi" => self.trust.xi = parse(key, value)?,
            "alpha" => self.trust.alpha = parse(key, value)?,
            "rho_clip" => self.trust.rho_clip = parse(key, value)?,
            "lr_pi" => self.lr_pi = parse(key, value)?,
            "lr_v" => self.lr_v = parse(key, value)?,
            "lr_head" => self.lr_head = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse(key, value)?,
            "capacity" => self.capacity = parse(key, value)?,
            "minibatch" => self.minibatch = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "replay_ratio" => self.replay_ratio = parse(key, value)?,
            "head_replay" => self.head_replay = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "distance" => self.distance = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Every key with its current value, in the order `set` accepts them.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synthetic;
        vec![
            ("seed", self.seed.to_string()),
            ("ids", s.num_identities.to_string()),
            ("sets_per_id", s.sets_per_identity.to_string()),
            ("set_size_min", s.set_size_min.to_string()),
            ("set_size_max", s.set_size_max.to_string()),
            ("dim", s.dim.to_string()),
            ("noise", s.noise_scale.to_string()),
            ("outlier_rate", s.outlier_rate.to_string()),
            ("profile_rate", s.profile_rate.to_string()),
            ("pose_shift", s.pose_shift_scale.to_string()),
            ("data", self.data.as_ref().map_or(String::new(), |p| p.display().to_string())),
            ("test_fraction", self.test_fraction.to_string()),
            ("trunk_widths", join(&self.trunk_widths)),
            ("head_hidden", join(&self.head_hidden)),
            ("interaction", self.interaction.to_string()),
            ("gamma", self.gamma.to_string()),
            ("lambda", self.lambda.to_string()),
            ("xi", self.trust.xi.to_string()),
            ("alpha", self.trust.alpha.to_string()),
            ("rho_clip", self.trust.rho_clip.to_string()),
            ("lr_pi", self.lr_pi.to_string()),
            ("lr_v", self.lr_v.to_string()),
            ("lr_head", self.lr_head.to_string()),
            ("momentum", self.momentum.to_string()),
            ("max_grad_norm", self.max_grad_norm.to_string()),
            ("capacity", self.capacity.to_string()),
            ("minibatch", self.minibatch.to_string()),
            ("warmup", self.warmup.to_string()),
            ("replay_ratio", self.replay_ratio.to_string()),
            ("head_replay", self.head_replay.to_string()),
            ("episodes", self.episodes.to_string()),
            ("mode", self.mode.to_string()),
            ("distance", self.distance.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_none() {
            self.synthetic.validate()?;
        }
        self.trust.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", "must lie in (0, 1)"));
        }
        if self.trunk_widths.is_empty() || self.trunk_widths.contains(&0) {
            return Err(Error::config("trunk_widths", "need one or more positive widths"));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::config("head_hidden", "widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("gamma", format!("must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and >= 0"));
        }
        for (key, v) in [("lr_pi", self.lr_pi), ("lr_v", self.lr_v), ("lr_head", self.lr_head)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::config("max_grad_norm", "must be >= 0"));
        }
        for (key, v) in [
            ("capacity", self.capacity),
            ("minibatch", self.minibatch),
            ("replay_ratio", self.replay_ratio),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.minibatch > self.capacity {
            return Err(Error::config("minibatch", "cannot exceed capacity"));
        }
        if self.warmup >= self.capacity {
            return Err(Error::config("warmup", "must be below capacity"));
        }
        Ok(())
    }
}
