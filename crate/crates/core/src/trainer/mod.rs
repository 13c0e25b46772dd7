//! Joint training of both stages: one scene per step, Adam with a single
//! step decay, global-norm clipping, periodic held-out evaluation and
//! checkpoints that capture everything needed to resume bit-exactly.
//!
//! Step `s` draws its scene subset and probe points from stream `s + 1` of a
//! ChaCha generator keyed by the run seed, so a resumed run sees exactly the
//! samples an uninterrupted one would.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{ArrayData, ArrayFile, NamedArray, MAGIC, VERSION};
pub use config::{Precision, TrainConfig, PRESETS};
pub use optim::{clip_global_norm, lr_at, Adam, AdamConfig};

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Elem, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::evalsuite::{evaluate_model, EvalOptions, ModelEval, ROT_THRESHOLD_DEG, TRANS_THRESHOLD};
use crate::loss::{register_alpha, total_loss_var, Alpha};
use crate::nn::Ctx;
use crate::posenet::{PointSource, SparsePose};
use crate::synthdata::{SceneSample, TrainingPool};

pub const METRICS_HEADER: &str = "step,loss,rot_loss,trans_loss,lr,eval_rot_acc15,eval_trans_acc20";
pub const CHECKPOINT_FILE: &str = "checkpoint.sppz";
pub const METRICS_FILE: &str = "metrics.csv";

const CONFIG_ARRAY: &str = "config";
const STEP_ARRAY: &str = "state.step";
const ADAM_T_ARRAY: &str = "state.adam_t";
const FEAT_DIM_ARRAY: &str = "meta.featurization_dim";
const PARAM_PREFIX: &str = "param/";
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

/// Stream offset separating the training pool from per-step sampling.
const POOL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One line of the metrics log. Evaluation fields are set on evaluation steps only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub rot_loss: f64,
    pub trans_loss: f64,
    pub lr: f64,
    pub eval_rot_acc15: Option<f64>,
    pub eval_trans_acc20: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.loss,
            self.rot_loss,
            self.trans_loss,
            self.lr,
            opt(self.eval_rot_acc15),
            opt(self.eval_trans_acc20)
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return None;
        }
        let opt = |s: &str| if s.is_empty() { Some(None) } else { s.parse().ok().map(Some) };
        Some(Self {
            step: f[0].parse().ok()?,
            loss: f[1].parse().ok()?,
            rot_loss: f[2].parse().ok()?,
            trans_loss: f[3].parse().ok()?,
            lr: f[4].parse().ok()?,
            eval_rot_acc15: opt(f[5])?,
            eval_trans_acc20: opt(f[6])?,
        })
    }
}

/// Result of one optimization step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub row: MetricsRow,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Parameters whose gradient had a nonzero entry.
    pub touched: Vec<ParamId>,
}

/// Model, parameters, optimizer and data of a run in progress.
pub struct Trainer<E: Elem> {
    pub config: TrainConfig,
    pub model: SparsePose,
    pub store: ParamStore<E>,
    pub adam: Adam<E>,
    /// Number of completed optimization steps.
    pub step: usize,
    alpha: Option<ParamId>,
    pool: TrainingPool,
    eval_set: Vec<SceneSample>,
}

impl<E: Elem> Trainer<E> {
    /// Fresh run: seeded initialization, training pool and held-out set.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (model, store, alpha) = build_model::<E>(&config)?;
        let adam = Adam::new(&store, AdamConfig::default());
        let pool = TrainingPool::generate(&config.data, config.train_scenes, config.seed ^ POOL_SEED_SALT)?;
        let eval_set = if config.eval_every > 0 {
            config
                .data
                .eval_set(&config.eval_counts, config.eval_scenes_per_count, config.eval_seed)?
        } else {
            Vec::new()
        };
        Ok(Self {
            config,
            model,
            store,
            adam,
            step: 0,
            alpha,
            pool,
            eval_set,
        })
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.step, self.config.lr, self.config.decay_step, self.config.decay_factor)
    }

    /// One forward/backward/update on a freshly drawn training example.
    /// On a non-finite loss or gradient nothing is modified.
    pub fn train_step(&mut self) -> Result<StepReport> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(self.step as u64 + 1);
        let mut scene = self.pool.sample(&cfg.data, &mut rng)?;
        for _ in 0..8 {
            if !scene.degenerate {
                break;
            }
            scene = self.pool.sample(&cfg.data, &mut rng)?;
        }
        let lr = self.lr();
        let (loss, rot, trans, mut grads) = {
            let tape = Tape::<E>::new();
            let ctx = Ctx::new(&tape, &self.store);
            let out = self.model.forward(ctx, &scene.views, PointSource::Sample(&mut rng))?;
            let alpha = Alpha::from_config(&cfg.loss, self.alpha.map(|id| tape.param(&self.store, id)));
            let terms = total_loss_var(&out.iterates, &scene.gt_poses, &cfg.loss, alpha, cfg.supervision)?;
            let loss = terms.total.value().item().f64();
            if !loss.is_finite() {
                return Err(Error::NanLoss(self.step));
            }
            let grads = tape.backward(terms.total)?.into_params();
            (loss, terms.rotation, terms.translation, grads)
        };
        let touched = grads
            .iter()
            .filter(|(_, g)| g.data().iter().any(|v| *v != E::zero()))
            .map(|(id, _)| *id)
            .collect();
        for (id, g) in &grads {
            if !g.is_finite() {
                return Err(Error::NanGradient(self.store.get(*id).name.clone()));
            }
        }
        let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
        self.adam.step(&mut self.store, &grads, lr)?;
        let row = MetricsRow {
            step: self.step,
            loss,
            rot_loss: rot,
            trans_loss: trans,
            lr,
            eval_rot_acc15: None,
            eval_trans_acc20: None,
        };
        self.step += 1;
        Ok(StepReport { row, grad_norm, touched })
    }

    /// Held-out evaluation of the current parameters.
    pub fn evaluate(&self) -> Result<ModelEval> {
        evaluate_model(
            &self.model,
            &self.store,
            &self.eval_set,
            &EvalOptions::default(),
            self.config.eval_seed,
        )
    }

    fn due_for_eval(&self) -> bool {
        let every = self.config.eval_every;
        every > 0 && !self.eval_set.is_empty() && (self.step.is_multiple_of(every) || self.step == self.config.steps)
    }

    /// Trains until `config.steps`. With `out_dir`, the metrics log is
    /// appended to and checkpoints are written there. On a numeric failure the
    /// last good state is checkpointed before the error is returned.
    pub fn run(&mut self, out_dir: Option<&Path>) -> Result<Vec<MetricsRow>> {
        let mut log_file = match out_dir {
            Some(dir) => Some(open_metrics(dir, self.step)?),
            None => None,
        };
        let mut rows = Vec::new();
        while self.step < self.config.steps {
            let mut row = match self.train_step() {
                Ok(r) => r.row,
                Err(e @ (Error::NanLoss(_) | Error::NanGradient(_))) => {
                    if let Some(dir) = out_dir {
                        self.to_checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if self.due_for_eval() {
                let ev = self.evaluate()?;
                row.eval_rot_acc15 = Some(ev.last().rot_acc(ROT_THRESHOLD_DEG));
                row.eval_trans_acc20 = Some(ev.last().trans_acc(TRANS_THRESHOLD));
                log::info!(
                    "step {} loss {:.4} eval rot@15 {:.3} trans@20 {:.3}",
                    self.step,
                    row.loss,
                    row.eval_rot_acc15.unwrap_or(0.0),
                    row.eval_trans_acc20.unwrap_or(0.0)
                );
            }
            if let Some((file, path)) = log_file.as_mut() {
                writeln!(file, "{}", row.to_csv_line()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            rows.push(row);
            if let Some(dir) = out_dir {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step.is_multiple_of(every) && self.step < self.config.steps {
                    self.to_checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.to_checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(rows)
    }

    /// Parameters, optimizer moments, step counter and config.
    pub fn to_checkpoint(&self) -> ArrayFile {
        let mut arrays = vec![
            NamedArray::bytes(CONFIG_ARRAY, self.config.to_text().as_bytes()),
            NamedArray::from_tensor(STEP_ARRAY, &Tensor::<f64>::full(&[1], self.step as f64)),
            NamedArray::from_tensor(ADAM_T_ARRAY, &Tensor::<f64>::full(&[1], self.adam.t as f64)),
            NamedArray::from_tensor(
                FEAT_DIM_ARRAY,
                &Tensor::<f64>::full(&[1], self.config.model.featurization_dim() as f64),
            ),
        ];
        for (id, p) in self.store.iter() {
            arrays.push(NamedArray::from_tensor(format!("{PARAM_PREFIX}{}", p.name), &p.value));
            arrays.push(NamedArray::from_tensor(format!("{M_PREFIX}{}", p.name), &self.adam.m[id.index()]));
            arrays.push(NamedArray::from_tensor(format!("{V_PREFIX}{}", p.name), &self.adam.v[id.index()]));
        }
        ArrayFile { arrays }
    }

    /// Resumes a run from a checkpoint written by [`Trainer::to_checkpoint`].
    pub fn from_checkpoint(file: &ArrayFile) -> Result<Self> {
        let config = checkpoint_config(file)?;
        check_precision::<E>(&config)?;
        let mut t = Self::new(config)?;
        restore_params(&mut t.store, file)?;
        for (id, p) in t.store.iter() {
            for (prefix, dst) in [(M_PREFIX, &mut t.adam.m), (V_PREFIX, &mut t.adam.v)] {
                let arr = file.require(&format!("{prefix}{}", p.name))?.to_tensor::<E>()?;
                if arr.shape() != p.value.shape() {
                    return Err(Error::CorruptCheckpoint(format!("moment shape mismatch for `{}`", p.name)));
                }
                dst[id.index()] = arr;
            }
        }
        t.step = scalar_array(file, STEP_ARRAY)? as usize;
        t.adam.t = scalar_array(file, ADAM_T_ARRAY)? as u64;
        Ok(t)
    }
}

/// Freshly initialized model for `config` (seeded by `config.seed`), with
/// the learnable loss shape registered if enabled.
pub fn build_model<E: Elem>(config: &TrainConfig) -> Result<(SparsePose, ParamStore<E>, Option<ParamId>)> {
    let mut store = ParamStore::new();
    let model = SparsePose::new(config.model.clone(), &mut store, config.seed)?;
    let alpha = register_alpha(&mut store, &config.loss);
    Ok((model, store, alpha))
}

fn check_precision<E: Elem>(config: &TrainConfig) -> Result<()> {
    let want = match E::DTYPE {
        crate::autodiff::DType::F32 => Precision::F32,
        crate::autodiff::DType::F64 => Precision::F64,
    };
    if config.precision != want {
        return Err(Error::Config(format!(
            "checkpoint was trained in {}, requested {want}",
            config.precision
        )));
    }
    Ok(())
}

fn scalar_array(file: &ArrayFile, name: &str) -> Result<f64> {
    let t = file.require(name)?.to_tensor::<f64>()?;
    if t.numel() != 1 {
        return Err(Error::CorruptCheckpoint(format!("`{name}` is not a scalar")));
    }
    Ok(t.data()[0])
}

/// Config snapshot stored in a checkpoint.
pub fn checkpoint_config(file: &ArrayFile) -> Result<TrainConfig> {
    let arr = file.require(CONFIG_ARRAY)?;
    let ArrayData::U8(bytes) = &arr.data else {
        return Err(Error::CorruptCheckpoint("config array is not text".into()));
    };
    let text = std::str::from_utf8(bytes).map_err(|_| Error::CorruptCheckpoint("config is not UTF-8".into()))?;
    let cfg = TrainConfig::parse_text(text, "checkpoint config", TrainConfig::default())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Copies every `param/` array into `store`; each stored parameter must be
/// present exactly once with its registered shape, and nothing else may be.
fn restore_params<E: Elem>(store: &mut ParamStore<E>, file: &ArrayFile) -> Result<()> {
    let mut seen = vec![false; store.len()];
    for a in file.arrays.iter().filter(|a| a.name.starts_with(PARAM_PREFIX)) {
        let name = &a.name[PARAM_PREFIX.len()..];
        let id = store
            .id(name)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown parameter `{name}`")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::CorruptCheckpoint(format!("parameter `{name}` appears twice")));
        }
        store.set_value(id, a.to_tensor()?)?;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let name = &store.iter().nth(i).expect("index in range").1.name;
        return Err(Error::CorruptCheckpoint(format!("missing parameter `{name}`")));
    }
    Ok(())
}

/// Model and parameters from a checkpoint, for evaluation and inference.
pub fn load_model<E: Elem>(file: &ArrayFile) -> Result<(TrainConfig, SparsePose, ParamStore<E>)> {
    let config = checkpoint_config(file)?;
    check_precision::<E>(&config)?;
    let (model, mut store, _) = build_model::<E>(&config)?;
    restore_params(&mut store, file)?;
    Ok((config, model, store))
}

/// Opens `dir/metrics.csv` for appending. Rows from `start_step` on are
/// dropped first, so a resumed run continues the log without duplicates.
fn open_metrics(dir: &Path, start_step: usize) -> Result<(std::fs::File, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let mut kept = vec![METRICS_HEADER.to_string()];
    if start_step > 0 {
        if let Ok(text) = std::fs::read_to_string(&path) {
            kept.extend(
                text.lines()
                    .skip(1)
                    .filter(|l| MetricsRow::parse_csv_line(l).is_some_and(|r| r.step < start_step))
                    .map(String::from),
            );
        }
    }
    let mut body = kept.join("\n");
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    let f = OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    Ok((f, path))
}

/// Reads a metrics log written by [`Trainer::run`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                msg: format!("expected header `{METRICS_HEADER}`"),
            })
        }
    }
    lines
        .map(|(i, l)| {
            MetricsRow::parse_csv_line(l).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: "malformed metrics row".into(),
            })
        })
        .collect()
}

/// Runs training in the configured precision, optionally resuming from a checkpoint.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>, resume: Option<&ArrayFile>) -> Result<Vec<MetricsRow>> {
    fn go<E: Elem>(config: &TrainConfig, out_dir: Option<&Path>, resume: Option<&ArrayFile>) -> Result<Vec<MetricsRow>> {
        let mut t = match resume {
            Some(f) => {
                let mut t = Trainer::<E>::from_checkpoint(f)?;
                t.config.steps = config.steps;
                t
            }
            None => Trainer::<E>::new(config.clone())?,
        };
        t.run(out_dir)
    }
    match config.precision {
        Precision::F32 => go::<f32>(config, out_dir, resume),
        Precision::F64 => go::<f64>(config, out_dir, resume),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(steps: usize, precision: Precision) -> TrainConfig {
        TrainConfig {
            steps,
            precision,
            train_scenes: 6,
            eval_every: 0,
            ..TrainConfig::preset("tiny").unwrap()
        }
    }

    #[test]
    fn metrics_row_round_trip() {
        let r = MetricsRow {
            step: 3,
            loss: 0.1 + 0.2,
            rot_loss: 1.0 / 3.0,
            trans_loss: 2.5,
            lr: 1e-4,
            eval_rot_acc15: None,
            eval_trans_acc20: Some(0.25),
        };
        assert_eq!(MetricsRow::parse_csv_line(&r.to_csv_line()), Some(r));
    }

    #[test]
    fn checkpoint_round_trip_restores_everything() {
        let mut t = Trainer::<f64>::new(tiny(3, Precision::F64)).unwrap();
        t.run(None).unwrap();
        let file = t.to_checkpoint();
        let bytes = file.to_bytes().unwrap();
        let back = Trainer::<f64>::from_checkpoint(&ArrayFile::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.step, 3);
        assert_eq!(back.adam, t.adam);
        assert_eq!(back.config, t.config);
        for ((_, a), (_, b)) in back.store.iter().zip(t.store.iter()) {
            assert_eq!(a.value, b.value);
        }
        assert_eq!(back.to_checkpoint().to_bytes().unwrap(), bytes);
        assert!(Trainer::<f32>::from_checkpoint(&file).is_err());
    }

    #[test]
    fn missing_parameter_is_corrupt() {
        let t = Trainer::<f64>::new(tiny(1, Precision::F64)).unwrap();
        let mut file = t.to_checkpoint();
        let i = file.arrays.iter().position(|a| a.name.starts_with(PARAM_PREFIX)).unwrap();
        file.arrays.remove(i);
        assert!(matches!(load_model::<f64>(&file), Err(Error::CorruptCheckpoint(_))));
        let mut file = t.to_checkpoint();
        let dup = file.arrays[i].clone();
        file.arrays.push(dup);
        assert!(matches!(load_model::<f64>(&file), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn nan_loss_aborts_without_update() {
        let mut t = Trainer::<f64>::new(tiny(2, Precision::F64)).unwrap();
        let id = t.store.id("init.head.0.weight").unwrap();
        t.store.value_mut(id).data_mut()[0] = f64::NAN;
        let before = t.to_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let err = t.run(Some(dir.path())).unwrap_err();
        assert!(matches!(err, Error::NanLoss(0) | Error::NanGradient(_)), "{err:?}");
        assert_eq!(t.step, 0);
        let saved = ArrayFile::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(saved.to_bytes().unwrap(), before.to_bytes().unwrap());
    }
}
