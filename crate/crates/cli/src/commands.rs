use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sparsepose::autodiff::{Elem, ParamStore, Tape};
use sparsepose::camera::{CameraView, Intrinsics};
use sparsepose::evalsuite::{
    evaluate_model, plot_cameras, run_ablation, AblationSettings, EvalOptions, ModelEval, Variant, LSTM_STEP_CHOICES,
    PAPER_VARIANTS, ROT_THRESHOLD_DEG, TRANS_THRESHOLD,
};
use sparsepose::geometry::{canonicalize_to_first, Pose};
use sparsepose::gradcheck::{check_end_to_end, run_suite, GradCheckConfig};
use sparsepose::nn::Ctx;
use sparsepose::posenet::{PointSource, SparsePose};
use sparsepose::synthdata::{
    generate_scene, load_pose_file, load_scene_bundle, read_ppm, write_pose_file, write_scene_bundle, PoseRecord,
    SceneSample, Split,
};
use sparsepose::trainer::{self, build_model, checkpoint_config, load_model, ArrayFile, Precision, TrainConfig};
use sparsepose::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Command, ConfigArgs, Failure};

type CliResult<T = ()> = Result<T, Failure>;

pub fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::GenData {
            out,
            scenes,
            seed,
            split,
            views,
            cfg,
        } => gen_data(&out, scenes, seed, &split, views, &cfg),
        Command::Train {
            cfg,
            out,
            resume,
            seed,
        } => train(&cfg, &out, resume.as_deref(), seed),
        Command::Eval {
            ckpt,
            cfg,
            data,
            counts,
            per_count,
            sim_align,
            camera_centers,
            plots,
            out,
            seed,
        } => {
            let opts = EvalOptions {
                sim_align,
                camera_centers,
                ..EvalOptions::default()
            };
            let source = match ckpt {
                Some(p) => ModelSource::Checkpoint(p),
                None => ModelSource::Fresh(Box::new(load_config(&cfg)?)),
            };
            eval(source, data.as_deref(), &counts, per_count, &opts, plots, &out, seed)
        }
        Command::Infer {
            ckpt,
            images,
            intrinsics,
            out,
            seed,
        } => infer(&ckpt, &images, &intrinsics, &out, seed),
        Command::Ablate {
            cfg,
            variants,
            out,
            seed,
        } => ablate(&cfg, &variants, &out, seed),
        Command::Gradcheck { seed } => gradcheck(seed),
        Command::Plot { pred, gt, out, .. } => plot(&pred, &gt, &out),
    }
}

fn load_config(cfg: &ConfigArgs) -> CliResult<TrainConfig> {
    let base = match &cfg.preset {
        Some(name) => TrainConfig::preset(name)?,
        None => TrainConfig::default(),
    };
    Ok(TrainConfig::load_onto(base, cfg.config.as_deref(), &cfg.overrides)?)
}

fn with_seed(mut cfg: TrainConfig, seed: Option<u64>) -> CliResult<TrainConfig> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::io(dir, e)))
}

fn gen_data(out: &Path, scenes: usize, seed: u64, split: &str, views: Option<usize>, cfg: &ConfigArgs) -> CliResult {
    let data = load_config(cfg)?.data;
    let split = if split == "train" { Split::Train } else { Split::Test };
    if views.is_some_and(|c| c == 0) {
        return Err(Failure::Usage("--views must be positive".into()));
    }
    log::info!("gen-data: {scenes} scenes, seed {seed}");
    create_dir(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..scenes {
        let c = views.unwrap_or_else(|| data.sample_num_views(&mut rng));
        let cat = rng.gen_range(data.categories(split));
        let scene = generate_scene(&data.spec(cat, rng.gen(), c), rng.gen())?;
        write_scene_bundle(&out.join(format!("scene_{i:04}")), &scene)?;
    }
    println!("wrote {scenes} scene bundles to {}", out.display());
    Ok(())
}

fn train(cfg: &ConfigArgs, out: &Path, resume: Option<&Path>, seed: Option<u64>) -> CliResult {
    create_dir(out)?;
    let (config, ckpt) = match resume {
        Some(path) => {
            let file = ArrayFile::load(path)?;
            let mut stored = checkpoint_config(&file)?;
            // Only the step budget may change on resume.
            if cfg.preset.is_some() || cfg.config.is_some() || !cfg.overrides.is_empty() {
                let asked = load_config(cfg)?;
                stored.steps = asked.steps;
            }
            (with_seed(stored, seed)?, Some(file))
        }
        None => (with_seed(load_config(cfg)?, seed)?, None),
    };
    log::info!(
        "train: seed {} precision {} steps {} -> {}",
        config.seed,
        config.precision,
        config.steps,
        out.display()
    );
    std::fs::write(out.join("config.txt"), config.to_text()).map_err(|e| Failure::from(Error::io(out, e)))?;
    let rows = trainer::train(&config, Some(out), ckpt.as_ref())?;
    if let Some(last) = rows.last() {
        println!("trained to step {} (last loss {})", last.step + 1, last.loss);
    } else {
        println!("nothing to do: already at step {}", config.steps);
    }
    Ok(())
}

enum ModelSource {
    Checkpoint(PathBuf),
    /// Untrained model initialized from a config.
    Fresh(Box<TrainConfig>),
}

fn scene_dirs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if dir.join("poses.csv").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("poses.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::Data(format!("no scene bundles under {}", dir.display())));
    }
    Ok(dirs)
}

#[allow(clippy::too_many_arguments)]
fn eval(
    source: ModelSource,
    data: Option<&Path>,
    counts: &[usize],
    per_count: usize,
    opts: &EvalOptions,
    plots: usize,
    out: &Path,
    seed: u64,
) -> CliResult {
    let (config, file) = match source {
        ModelSource::Checkpoint(p) => {
            let file = ArrayFile::load(&p)?;
            (checkpoint_config(&file)?, Some(file))
        }
        ModelSource::Fresh(c) => (*c, None),
    };
    let scenes = match data {
        Some(dir) => scene_dirs(dir)?
            .iter()
            .map(|d| load_scene_bundle(d))
            .collect::<Result<Vec<_>, _>>()?,
        None => config.data.eval_set(counts, per_count, seed)?,
    };
    log::info!("eval: {} scenes, seed {seed}", scenes.len());
    let ev = match config.precision {
        Precision::F32 => eval_model::<f32>(&config, file.as_ref(), &scenes, opts, seed)?,
        Precision::F64 => eval_model::<f64>(&config, file.as_ref(), &scenes, opts, seed)?,
    };
    write_eval(&ev, &scenes, opts, plots, out)
}

fn eval_model<E: Elem>(
    config: &TrainConfig,
    file: Option<&ArrayFile>,
    scenes: &[SceneSample],
    opts: &EvalOptions,
    seed: u64,
) -> CliResult<ModelEval> {
    let (model, store): (SparsePose, ParamStore<E>) = match file {
        Some(f) => {
            let (_, m, s) = load_model::<E>(f)?;
            (m, s)
        }
        None => {
            let (m, s, _) = build_model::<E>(config)?;
            (m, s)
        }
    };
    if let Some(s) = scenes.iter().find(|s| s.num_views() > model.config.max_views) {
        return Err(Failure::Data(format!(
            "scene with {} views exceeds the model's {} view slots",
            s.num_views(),
            model.config.max_views
        )));
    }
    Ok(evaluate_model(&model, &store, scenes, opts, seed)?)
}

fn write_eval(ev: &ModelEval, scenes: &[SceneSample], opts: &EvalOptions, plots: usize, out: &Path) -> CliResult {
    create_dir(out)?;
    ev.last().write_csv(&out.join("metrics.csv"))?;
    ev.last().write_summary_csv(&out.join("summary.csv"), opts)?;
    ev.initial().write_csv(&out.join("metrics_init.csv"))?;
    ev.initial().write_summary_csv(&out.join("summary_init.csv"), opts)?;

    let mut iters = String::from("iteration,rot_acc15,trans_acc20,mean_rot_acc15_by_count\n");
    for (k, r) in ev.iterations.iter().enumerate() {
        let _ = writeln!(
            iters,
            "{k},{},{},{}",
            r.rot_acc(opts.rot_thresh_deg),
            r.trans_acc(opts.trans_thresh),
            r.mean_rot_acc_by_count(opts.rot_thresh_deg)
        );
    }
    let p = out.join("iterations.csv");
    std::fs::write(&p, iters).map_err(|e| Failure::from(Error::io(&p, e)))?;

    if plots > 0 {
        let dir = out.join("plots");
        create_dir(&dir)?;
        for (i, (scene, pred)) in scenes.iter().zip(&ev.predictions).take(plots).enumerate() {
            let gt = canonicalize_to_first(&scene.gt_poses)?;
            let pred = canonicalize_to_first(pred)?;
            plot_cameras(&pred, &gt, &dir.join(format!("scene_{i:04}.svg")))?;
        }
    }

    println!("C,rot_acc15_init,rot_acc15_final,trans_acc20_init,trans_acc20_final");
    for (a, b) in ev.initial().summary(opts).iter().zip(ev.last().summary(opts)) {
        println!(
            "{},{:.4},{:.4},{:.4},{:.4}",
            a.num_views, a.rot_acc, b.rot_acc, a.trans_acc, b.trans_acc
        );
    }
    println!(
        "all,{:.4},{:.4},{:.4},{:.4}",
        ev.initial().rot_acc(ROT_THRESHOLD_DEG),
        ev.last().rot_acc(ROT_THRESHOLD_DEG),
        ev.initial().trans_acc(TRANS_THRESHOLD),
        ev.last().trans_acc(TRANS_THRESHOLD)
    );
    if ev.degenerate_scenes > 0 {
        log::warn!("{} scenes used a fallback capture volume", ev.degenerate_scenes);
    }
    Ok(())
}

fn read_intrinsics(path: &Path) -> CliResult<Vec<(String, Intrinsics)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::from(Error::io(path, e)))?;
    let bad = |line: usize, msg: &str| {
        Failure::from(Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.to_string(),
        })
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "frame_id,fx,fy,cx,cy" => {}
        _ => return Err(bad(1, "expected header `frame_id,fx,fy,cx,cy`")),
    }
    let mut out = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(bad(i + 1, "expected 5 fields"));
        }
        let v = f[1..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| bad(i + 1, "intrinsics must be numbers"))?;
        out.push((f[0].to_string(), Intrinsics::new(v[0], v[1], v[2], v[3])?));
    }
    Ok(out)
}

fn infer(ckpt: &Path, images: &Path, intrinsics: &Path, out: &Path, seed: u64) -> CliResult {
    let file = ArrayFile::load(ckpt)?;
    let config = checkpoint_config(&file)?;
    let intr = read_intrinsics(intrinsics)?;
    let entries = std::fs::read_dir(images).map_err(|e| Failure::from(Error::io(images, e)))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        return Err(Failure::Data(format!("need at least two .ppm images in {}", images.display())));
    }
    let mut views = Vec::with_capacity(paths.len());
    let mut ids = Vec::with_capacity(paths.len());
    for p in &paths {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let k = intr
            .iter()
            .find(|(id, _)| *id == stem)
            .map(|(_, k)| *k)
            .ok_or_else(|| Failure::Data(format!("no intrinsics row for frame `{stem}`")))?;
        let image = read_ppm(p)?;
        if image.height != config.model.image_size || image.width != config.model.image_size {
            return Err(Failure::Data(format!(
                "{} is {}x{}, the model expects {}x{}",
                p.display(),
                image.width,
                image.height,
                config.model.image_size,
                config.model.image_size
            )));
        }
        views.push(CameraView {
            intrinsics: k,
            pose: Pose::IDENTITY,
            image,
        });
        ids.push((stem, k));
    }
    log::info!("infer: {} views, seed {seed}", views.len());
    let poses = match config.precision {
        Precision::F32 => predict::<f32>(&file, &views, seed)?,
        Precision::F64 => predict::<f64>(&file, &views, seed)?,
    };
    let records: Vec<PoseRecord> = ids
        .into_iter()
        .zip(poses)
        .map(|((frame_id, intrinsics), pose)| PoseRecord {
            frame_id,
            pose,
            intrinsics,
        })
        .collect();
    write_pose_file(out, &records)?;
    println!("wrote {} poses to {}", records.len(), out.display());
    Ok(())
}

fn predict<E: Elem>(file: &ArrayFile, views: &[CameraView], seed: u64) -> CliResult<Vec<Pose>> {
    let (_, model, store) = load_model::<E>(file)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tape = Tape::<E>::new();
    let out = model.forward(Ctx::new(&tape, &store), views, PointSource::Sample(&mut rng))?;
    Ok(canonicalize_to_first(out.trajectory()?.last())?)
}

fn ablate(cfg: &ConfigArgs, variants: &str, out: &Path, seed: Option<u64>) -> CliResult {
    let base = with_seed(load_config(cfg)?, seed)?;
    let list = if variants.trim() == "paper" {
        let mut v: Vec<Variant> = PAPER_VARIANTS.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        v.extend(LSTM_STEP_CHOICES.iter().filter(|&&n| n <= 10).map(|&n| Variant::LstmSteps(n)));
        v
    } else {
        Variant::parse_list(variants)?
    };
    log::info!("ablate: {} variants, seed {}", list.len(), base.seed);
    let settings = AblationSettings {
        eval_seed: base.eval_seed,
        base,
    };
    let rows = run_ablation(&settings, &list, Some(out))?;
    println!("variant,C,rot_acc15,trans_acc20");
    for r in &rows {
        println!("{},{},{:.4},{:.4}", r.variant, r.num_views, r.rot_acc, r.trans_acc);
    }
    Ok(())
}

fn gradcheck(seed: u64) -> CliResult {
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    log::info!("gradcheck: seed {seed}");
    let mut results = run_suite(&cfg)?;
    results.push(check_end_to_end(&cfg)?);
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!("{status:4} {:<40} max_rel_err={:.3e} entries={}", r.name, r.max_rel_err, r.entries);
    }
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(Failure::Numeric(format!("{failed} gradient checks exceeded tolerance")));
    }
    Ok(())
}

fn plot(pred: &Path, gt: &Path, out: &Path) -> CliResult {
    let p: Vec<Pose> = load_pose_file(pred)?.into_iter().map(|r| r.pose).collect();
    let g: Vec<Pose> = load_pose_file(gt)?.into_iter().map(|r| r.pose).collect();
    if p.is_empty() || p.len() != g.len() {
        return Err(Failure::Data(format!(
            "pose files have {} and {} rows; need equal, nonzero counts",
            p.len(),
            g.len()
        )));
    }
    let csv = plot_cameras(&canonicalize_to_first(&p)?, &canonicalize_to_first(&g)?, out)?;
    println!("wrote {} and {}", out.display(), csv.display());
    Ok(())
}
