use std::path::Path;
use std::str::FromStr;

use crate::autodiff::Elem;
use crate::error::{Error, Result};
use crate::synthdata::SceneSample;
use crate::trainer::{Precision, TrainConfig, Trainer};

use super::{csv_error, csv_writer, evaluate_model, EvalOptions, EvalReport, ModelEval};

/// Single-component ablations of the full model.
pub const PAPER_VARIANTS: [&str; 6] = ["init-only", "no-resample", "mlp", "no-posenc", "rgb", "no-robust"];

/// Refinement step counts accepted by `lstm-steps-N`.
pub const LSTM_STEP_CHOICES: [usize; 5] = [0, 1, 5, 10, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Base,
    /// The base model read off at trajectory iteration 0.
    InitOnly,
    NoResample,
    /// Stateless layer in place of the LSTM.
    Mlp,
    NoPositionalEncoding,
    /// Sample image colours instead of encoder features.
    Rgb,
    /// Plain squared-error penalty (shape 2).
    NoRobust,
    LstmSteps(usize),
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "base" => Variant::Base,
            "init-only" => Variant::InitOnly,
            "no-resample" => Variant::NoResample,
            "mlp" => Variant::Mlp,
            "no-posenc" => Variant::NoPositionalEncoding,
            "rgb" => Variant::Rgb,
            "no-robust" => Variant::NoRobust,
            other => {
                let steps = other
                    .strip_prefix("lstm-steps-")
                    .and_then(|n| n.parse().ok())
                    .filter(|n| LSTM_STEP_CHOICES.contains(n));
                match steps {
                    Some(n) => Variant::LstmSteps(n),
                    None => return Err(Error::Config(format!("unknown ablation variant `{other}`"))),
                }
            }
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Base => f.write_str("base"),
            Variant::InitOnly => f.write_str("init-only"),
            Variant::NoResample => f.write_str("no-resample"),
            Variant::Mlp => f.write_str("mlp"),
            Variant::NoPositionalEncoding => f.write_str("no-posenc"),
            Variant::Rgb => f.write_str("rgb"),
            Variant::NoRobust => f.write_str("no-robust"),
            Variant::LstmSteps(n) => write!(f, "lstm-steps-{n}"),
        }
    }
}

impl Variant {
    /// Parses a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<Variant>> {
        s.split(',').filter(|v| !v.trim().is_empty()).map(str::parse).collect()
    }

    /// Training config this variant needs.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::Base | Variant::InitOnly => {}
            Variant::NoResample => c.model.resample_points = false,
            Variant::Mlp => c.model.use_lstm = false,
            Variant::NoPositionalEncoding => c.model.positional_encoding = false,
            Variant::Rgb => c.model.rgb_features = true,
            Variant::NoRobust => {
                c.loss.alpha = 2.0;
                c.loss.alpha_learnable = false;
            }
            Variant::LstmSteps(n) => c.model.iterations = n,
        }
        c
    }
}

/// Shared training base and held-out set for all variants.
#[derive(Debug, Clone)]
pub struct AblationSettings {
    pub base: TrainConfig,
    pub eval_seed: u64,
}

/// Accuracy of one variant on scenes with one view count.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub num_views: usize,
    pub scenes: usize,
    pub cameras: usize,
    pub rot_acc: f64,
    pub trans_acc: f64,
    pub mean_rot_err_deg: f64,
    pub mean_trans_err: f64,
    /// Training loss averaged over the last tenth of the run.
    pub final_train_loss: f64,
}

struct Trained {
    config: TrainConfig,
    eval: ModelEval,
    final_loss: f64,
}

fn train_and_eval<E: Elem>(cfg: &TrainConfig, scenes: &[SceneSample], seed: u64) -> Result<Trained> {
    let mut run_cfg = cfg.clone();
    run_cfg.eval_every = 0;
    let mut t = Trainer::<E>::new(run_cfg)?;
    let rows = t.run(None)?;
    let tail = &rows[rows.len() - rows.len().div_ceil(10).min(rows.len())..];
    let final_loss = if tail.is_empty() {
        f64::NAN
    } else {
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64
    };
    let eval = evaluate_model(&t.model, &t.store, scenes, &EvalOptions::default(), seed)?;
    Ok(Trained {
        config: cfg.clone(),
        eval,
        final_loss,
    })
}

/// Trains every variant with the same seed and data, evaluates each on the
/// shared held-out set, and returns one row per variant and view count
/// (base first). Variants that resolve to the same training config share a
/// run. Writes the table as CSV if `out` is given.
pub fn run_ablation(settings: &AblationSettings, variants: &[Variant], out: Option<&Path>) -> Result<Vec<AblationRow>> {
    let base = &settings.base;
    base.validate()?;
    let scenes = base
        .data
        .eval_set(&base.eval_counts, base.eval_scenes_per_count, settings.eval_seed)?;
    let mut order = vec![Variant::Base];
    order.extend(variants.iter().copied().filter(|v| *v != Variant::Base));
    let mut cache: Vec<Trained> = Vec::new();
    let mut rows = Vec::new();
    for v in order {
        let cfg = v.apply(base);
        cfg.validate()?;
        let idx = match cache.iter().position(|t| t.config == cfg) {
            Some(i) => i,
            None => {
                log::info!("ablation: training variant {v}");
                let t = match cfg.precision {
                    Precision::F32 => train_and_eval::<f32>(&cfg, &scenes, settings.eval_seed)?,
                    Precision::F64 => train_and_eval::<f64>(&cfg, &scenes, settings.eval_seed)?,
                };
                cache.push(t);
                cache.len() - 1
            }
        };
        let trained = &cache[idx];
        let report: &EvalReport = match v {
            Variant::InitOnly => trained.eval.initial(),
            _ => trained.eval.last(),
        };
        for s in report.summary(&EvalOptions::default()) {
            rows.push(AblationRow {
                variant: v.to_string(),
                num_views: s.num_views,
                scenes: s.scenes,
                cameras: s.cameras,
                rot_acc: s.rot_acc,
                trans_acc: s.trans_acc,
                mean_rot_err_deg: s.mean_rot_err_deg,
                mean_trans_err: s.mean_trans_err,
                final_train_loss: trained.final_loss,
            });
        }
    }
    if let Some(path) = out {
        write_ablation_csv(&rows, path)?;
    }
    Ok(rows)
}

pub const ABLATION_HEADER: [&str; 9] = [
    "variant",
    "C",
    "scenes",
    "cameras",
    "rot_acc15",
    "trans_acc20",
    "mean_rot_err_deg",
    "mean_trans_err",
    "final_train_loss",
];

fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(ABLATION_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.num_views.to_string(),
            r.scenes.to_string(),
            r.cameras.to_string(),
            r.rot_acc.to_string(),
            r.trans_acc.to_string(),
            r.mean_rot_err_deg.to_string(),
            r.mean_trans_err.to_string(),
            r.final_train_loss.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        let mut all: Vec<Variant> = PAPER_VARIANTS.iter().map(|s| s.parse().unwrap()).collect();
        all.extend(LSTM_STEP_CHOICES.iter().map(|&n| Variant::LstmSteps(n)));
        all.push(Variant::Base);
        for v in all {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn unknown_variant_is_config_error() {
        for bad in ["no-lstm", "lstm-steps-3", "lstm-steps-", ""] {
            assert!(matches!(bad.parse::<Variant>(), Err(Error::Config(_))), "{bad}");
        }
        assert!(Variant::parse_list("mlp,bogus").is_err());
        assert_eq!(Variant::parse_list("mlp, rgb").unwrap(), vec![Variant::Mlp, Variant::Rgb]);
    }

    #[test]
    fn variants_change_one_thing() {
        let base = TrainConfig::preset("tiny").unwrap();
        assert_eq!(Variant::InitOnly.apply(&base), base);
        assert!(!Variant::Mlp.apply(&base).model.use_lstm);
        assert_eq!(Variant::NoRobust.apply(&base).loss.alpha, 2.0);
        assert_eq!(Variant::LstmSteps(5).apply(&base).model.iterations, 5);
        assert!(Variant::Rgb.apply(&base).model.rgb_features);
    }

    #[test]
    fn harness_produces_row_per_variant_and_count() {
        let base = TrainConfig {
            steps: 3,
            train_scenes: 4,
            eval_counts: vec![3, 4],
            eval_scenes_per_count: 2,
            precision: Precision::F64,
            ..TrainConfig::preset("tiny").unwrap()
        };
        let settings = AblationSettings { base, eval_seed: 5 };
        let variants = [Variant::InitOnly, Variant::Mlp, Variant::LstmSteps(0)];
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ablation.csv");
        let rows = run_ablation(&settings, &variants, Some(&out)).unwrap();
        assert_eq!(rows.len(), 4 * 2);
        assert_eq!(rows[0].variant, "base");
        // init-only is the base model at iteration 0; zero refinement steps
        // trains a different model, so only the former is pinned.
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.rot_acc)));
    }
}
