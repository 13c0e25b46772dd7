use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::loss::{RobustPenaltyConfig, Supervision};
use crate::posenet::ModelConfig;
use crate::synthdata::DatasetConfig;

/// Arithmetic used for parameters, activations and gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("expected f32 or f64, got `{s}`")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Everything a training run depends on besides the code.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// First step that uses `lr / decay_factor`.
    pub decay_step: usize,
    pub decay_factor: f64,
    pub seed: u64,
    pub precision: Precision,
    pub clip_norm: f64,
    /// Scenes in the fixed training pool.
    pub train_scenes: usize,
    pub supervision: Supervision,
    /// Held-out evaluation every this many steps (0 disables).
    pub eval_every: usize,
    pub eval_counts: Vec<usize>,
    pub eval_scenes_per_count: usize,
    pub eval_seed: u64,
    /// Checkpoint every this many steps when writing to disk (0: only at the end).
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub data: DatasetConfig,
    pub loss: RobustPenaltyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            lr: 1e-4,
            decay_step: 15_000,
            decay_factor: 10.0,
            seed: 0,
            precision: Precision::F32,
            clip_norm: 5.0,
            train_scenes: 200,
            supervision: Supervision::Ends,
            eval_every: 1000,
            eval_counts: vec![3, 5, 7, 9],
            eval_scenes_per_count: 10,
            eval_seed: 7_919,
            checkpoint_every: 1000,
            model: ModelConfig::default(),
            data: DatasetConfig::default(),
            loss: RobustPenaltyConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 4] = ["default", "smoke", "tiny", "paper-scale"];

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        Ok(match name {
            "default" => base,
            "smoke" => Self {
                model: ModelConfig::smoke(),
                ..base
            },
            "tiny" => {
                let model = ModelConfig::tiny();
                Self {
                    steps: 200,
                    lr: 1e-3,
                    decay_step: 150,
                    train_scenes: 20,
                    eval_every: 100,
                    eval_counts: vec![3, 4],
                    eval_scenes_per_count: 4,
                    checkpoint_every: 100,
                    data: DatasetConfig {
                        image_size: model.image_size,
                        max_views: model.max_views,
                        ..DatasetConfig::default()
                    },
                    model,
                    ..base
                }
            }
            "paper-scale" => {
                let model = ModelConfig::paper_scale();
                Self {
                    steps: 500_000,
                    decay_step: 250_000,
                    precision: Precision::F32,
                    data: DatasetConfig {
                        image_size: model.image_size,
                        ..DatasetConfig::default()
                    },
                    model,
                    ..base
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.data.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.decay_factor >= 1.0 && self.decay_factor.is_finite()) {
            return bad(format!("decay_factor must be at least 1, got {}", self.decay_factor));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.train_scenes == 0 {
            return bad("train_scenes must be positive".into());
        }
        if self.data.image_size != self.model.image_size {
            return bad(format!(
                "data.image_size {} differs from model.image_size {}",
                self.data.image_size, self.model.image_size
            ));
        }
        if self.data.max_views > self.model.max_views {
            return bad(format!(
                "data.max_views {} exceeds model.max_views {}",
                self.data.max_views, self.model.max_views
            ));
        }
        if let Some(&c) = self.eval_counts.iter().find(|&&c| c < 2 || c > self.model.max_views) {
            return bad(format!("eval count {c} outside [2, {}]", self.model.max_views));
        }
        RobustPenaltyConfig::new(self.loss.alpha, self.loss.c)?;
        Ok(())
    }

    /// All keys with their current values, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let d = &self.data;
        let b = |v: bool| v.to_string();
        vec![
            ("steps", self.steps.to_string()),
            ("lr", self.lr.to_string()),
            ("decay_step", self.decay_step.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("train_scenes", self.train_scenes.to_string()),
            ("supervision", supervision_name(self.supervision).to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_counts", join(&self.eval_counts)),
            ("eval_scenes_per_count", self.eval_scenes_per_count.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("model.image_size", m.image_size.to_string()),
            ("model.patch_size", m.patch_size.to_string()),
            ("model.feature_dim", m.feature_dim.to_string()),
            ("model.max_views", m.max_views.to_string()),
            ("model.freeze_encoder", b(m.freeze_encoder)),
            ("model.init_heads", m.init_heads.to_string()),
            ("model.init_ff_hidden", m.init_ff_hidden.to_string()),
            ("model.init_mlp_hidden", m.init_mlp_hidden.to_string()),
            ("model.init_mlp_layers", m.init_mlp_layers.to_string()),
            ("model.refine_heads", m.refine_heads.to_string()),
            ("model.refine_attn_dim", m.refine_attn_dim.to_string()),
            ("model.refine_ff_hidden", m.refine_ff_hidden.to_string()),
            ("model.refine_dim", m.refine_dim.to_string()),
            ("model.lstm_hidden", m.lstm_hidden.to_string()),
            ("model.pose_mlp_hidden", m.pose_mlp_hidden.to_string()),
            ("model.num_points", m.num_points.to_string()),
            ("model.iterations", m.iterations.to_string()),
            ("model.fourier_bands", m.fourier_bands.to_string()),
            ("model.fourier_include_input", b(m.fourier_include_input)),
            ("model.resample_points", b(m.resample_points)),
            ("model.use_lstm", b(m.use_lstm)),
            ("model.positional_encoding", b(m.positional_encoding)),
            ("model.rgb_features", b(m.rgb_features)),
            ("model.detach_sample_coords", b(m.detach_sample_coords)),
            ("data.min_views", d.min_views.to_string()),
            ("data.max_views", d.max_views.to_string()),
            ("data.image_size", d.image_size.to_string()),
            ("data.fov_deg", d.fov_deg.to_string()),
            ("data.radius", format!("{},{}", d.radius.0, d.radius.1)),
            ("data.elevation", format!("{},{}", d.elevation.0, d.elevation.1)),
            ("data.azimuth_jitter", d.azimuth_jitter.to_string()),
            ("data.train_categories", range(&d.train_categories)),
            ("data.test_categories", range(&d.test_categories)),
            ("loss.alpha", self.loss.alpha.to_string()),
            ("loss.c", self.loss.c.to_string()),
            ("loss.alpha_learnable", b(self.loss.alpha_learnable)),
        ]
    }

    /// Sets one key; unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let d = &mut self.data;
        match key {
            "steps" => self.steps = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "decay_step" => self.decay_step = parse(key, v)?,
            "decay_factor" => self.decay_factor = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "precision" => self.precision = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "train_scenes" => self.train_scenes = parse(key, v)?,
            "supervision" => {
                self.supervision = match v {
                    "ends" => Supervision::Ends,
                    "all" => Supervision::All,
                    _ => return Err(bad_value(key, v, "expected ends or all")),
                }
            }
            "eval_every" => self.eval_every = parse(key, v)?,
            "eval_counts" => self.eval_counts = parse_list(key, v)?,
            "eval_scenes_per_count" => self.eval_scenes_per_count = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "model.image_size" => m.image_size = parse(key, v)?,
            "model.patch_size" => m.patch_size = parse(key, v)?,
            "model.feature_dim" => m.feature_dim = parse(key, v)?,
            "model.max_views" => m.max_views = parse(key, v)?,
            "model.freeze_encoder" => m.freeze_encoder = parse(key, v)?,
            "model.init_heads" => m.init_heads = parse(key, v)?,
            "model.init_ff_hidden" => m.init_ff_hidden = parse(key, v)?,
            "model.init_mlp_hidden" => m.init_mlp_hidden = parse(key, v)?,
            "model.init_mlp_layers" => m.init_mlp_layers = parse(key, v)?,
            "model.refine_heads" => m.refine_heads = parse(key, v)?,
            "model.refine_attn_dim" => m.refine_attn_dim = parse(key, v)?,
            "model.refine_ff_hidden" => m.refine_ff_hidden = parse(key, v)?,
            "model.refine_dim" => m.refine_dim = parse(key, v)?,
            "model.lstm_hidden" => m.lstm_hidden = parse(key, v)?,
            "model.pose_mlp_hidden" => m.pose_mlp_hidden = parse(key, v)?,
            "model.num_points" => m.num_points = parse(key, v)?,
            "model.iterations" => m.iterations = parse(key, v)?,
            "model.fourier_bands" => m.fourier_bands = parse(key, v)?,
            "model.fourier_include_input" => m.fourier_include_input = parse(key, v)?,
            "model.resample_points" => m.resample_points = parse(key, v)?,
            "model.use_lstm" => m.use_lstm = parse(key, v)?,
            "model.positional_encoding" => m.positional_encoding = parse(key, v)?,
            "model.rgb_features" => m.rgb_features = parse(key, v)?,
            "model.detach_sample_coords" => m.detach_sample_coords = parse(key, v)?,
            "data.min_views" => d.min_views = parse(key, v)?,
            "data.max_views" => d.max_views = parse(key, v)?,
            "data.image_size" => d.image_size = parse(key, v)?,
            "data.fov_deg" => d.fov_deg = parse(key, v)?,
            "data.radius" => d.radius = parse_pair(key, v)?,
            "data.elevation" => d.elevation = parse_pair(key, v)?,
            "data.azimuth_jitter" => d.azimuth_jitter = parse(key, v)?,
            "data.train_categories" => d.train_categories = parse_range(key, v)?,
            "data.test_categories" => d.test_categories = parse_range(key, v)?,
            "loss.alpha" => self.loss.alpha = parse(key, v)?,
            "loss.c" => self.loss.c = parse(key, v)?,
            "loss.alpha_learnable" => self.loss.alpha_learnable = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// `key = value` lines for every key; parses back to an equal config.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses config text on top of `base`. A `preset` key, if present, must
    /// come first and replaces `base`.
    pub fn parse_text(text: &str, origin: &str, base: TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base;
        let mut seen_key = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key == "preset" {
                if seen_key {
                    return Err(parse_err("`preset` must be the first key".into()));
                }
                cfg = TrainConfig::preset(value.trim())?;
            } else {
                cfg.set(key, value).map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("{origin}:{}: {msg}", i + 1)),
                    other => other,
                })?;
            }
            seen_key = true;
        }
        Ok(cfg)
    }

    /// Defaults, then the file (if any), then `key=value` overrides, validated.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
        TrainConfig::load_onto(TrainConfig::default(), file, overrides)
    }

    /// As [`TrainConfig::load`], starting from `base` instead of the defaults.
    pub fn load_onto(base: TrainConfig, file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
        let mut cfg = base;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg = TrainConfig::parse_text(&text, &path.display().to_string(), cfg)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            if k.trim() == "preset" {
                return Err(Error::Config("`preset` can only be set as the first key of a config file".into()));
            }
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn supervision_name(s: Supervision) -> &'static str {
    match s {
        Supervision::Ends => "ends",
        Supervision::All => "all",
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn range(r: &Range<u32>) -> String {
    format!("{}..{}", r.start, r.end)
}

fn bad_value(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("bad value `{value}` for `{key}`: {why}"))
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| bad_value(key, v, e))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| bad_value(key, v, "expected `lo,hi`"))?;
    let (a, b): (f64, f64) = (parse(key, a.trim())?, parse(key, b.trim())?);
    if a > b {
        return Err(bad_value(key, v, "lo exceeds hi"));
    }
    Ok((a, b))
}

fn parse_range(key: &str, v: &str) -> Result<Range<u32>> {
    let (a, b) = v
        .split_once("..")
        .ok_or_else(|| bad_value(key, v, "expected `start..end`"))?;
    Ok(parse(key, a.trim())?..parse(key, b.trim())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_for_every_preset() {
        for name in PRESETS {
            let mut cfg = TrainConfig::preset(name).unwrap();
            cfg.lr = 0.1 + 0.2;
            cfg.loss.alpha_learnable = true;
            let back = TrainConfig::parse_text(&cfg.to_text(), "mem", TrainConfig::default()).unwrap();
            assert_eq!(back, cfg, "preset {name}");
        }
    }

    #[test]
    fn every_entry_key_is_settable() {
        let mut cfg = TrainConfig::default();
        for (k, v) in TrainConfig::default().entries() {
            cfg.set(k, &v).unwrap();
        }
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = TrainConfig::parse_text("steps = 3\nmodel.widht = 4\n", "f.cfg", TrainConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("f.cfg:2") && m.contains("model.widht")));
        assert!(TrainConfig::default().set("nope", "1").is_err());
    }

    #[test]
    fn syntax_errors_carry_line() {
        let err = TrainConfig::parse_text("# c\n\nsteps 3\n", "f.cfg", TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = TrainConfig::parse_text("steps = x\n", "f.cfg", TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = TrainConfig::parse_text(
            "  steps=17   # short\n# all comment\nlr = 0.5\n",
            "mem",
            TrainConfig::default(),
        )
        .unwrap();
        assert_eq!((cfg.steps, cfg.lr), (17, 0.5));
    }

    #[test]
    fn preset_must_lead() {
        let cfg = TrainConfig::parse_text("preset = tiny\nsteps = 5\n", "mem", TrainConfig::default()).unwrap();
        assert_eq!(cfg.model, ModelConfig::tiny());
        assert_eq!(cfg.steps, 5);
        assert!(TrainConfig::parse_text("steps = 5\npreset = tiny\n", "mem", TrainConfig::default()).is_err());
        assert!(TrainConfig::preset("huge").is_err());
    }

    #[test]
    fn precedence_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        std::fs::write(&file, "steps = 11\nlr = 0.25\n").unwrap();
        let d = TrainConfig::default();
        // (file?, overrides, expected steps, expected lr, expected seed)
        let cases: Vec<(bool, Vec<&str>, usize, f64, u64)> = vec![
            (false, vec![], d.steps, d.lr, d.seed),
            (true, vec![], 11, 0.25, d.seed),
            (false, vec!["steps=3"], 3, d.lr, d.seed),
            (true, vec!["steps=3"], 3, 0.25, d.seed),
            (true, vec!["seed=9", "lr=0.5"], 11, 0.5, 9),
            (true, vec!["lr=0.5", "lr=0.75"], 11, 0.75, d.seed),
        ];
        for (use_file, sets, steps, lr, seed) in cases {
            let sets: Vec<String> = sets.into_iter().map(String::from).collect();
            let cfg = TrainConfig::load(use_file.then_some(file.as_path()), &sets).unwrap();
            assert_eq!((cfg.steps, cfg.lr, cfg.seed), (steps, lr, seed), "{use_file} {sets:?}");
        }
        assert!(TrainConfig::load(None, &["bogus=1".into()]).is_err());
        assert!(TrainConfig::load(None, &["steps".into()]).is_err());
    }

    #[test]
    fn validation() {
        let c = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { decay_factor: 0.5, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.data.image_size = 32;
        assert!(c.validate().is_err());
        for name in PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
    }
}
