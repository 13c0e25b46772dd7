use sparsepose::evalsuite::{evaluate_model, EvalOptions};
use sparsepose::synthdata::{load_scene_bundle, write_scene_bundle};
use sparsepose::trainer::{self, load_model, ArrayFile, CHECKPOINT_FILE};
use sparsepose::{Precision, TrainConfig, Trainer};

fn config() -> TrainConfig {
    TrainConfig {
        steps: 12,
        eval_every: 0,
        train_scenes: 6,
        precision: Precision::F64,
        ..TrainConfig::preset("tiny").unwrap()
    }
}

#[test]
fn loaded_checkpoint_predicts_like_the_trained_model() {
    let cfg = config();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::<f64>::new(cfg.clone()).unwrap();
    t.run(Some(dir.path())).unwrap();

    let scenes = cfg.data.eval_set(&[3, 4], 3, 11).unwrap();
    let opts = EvalOptions::default();
    let direct = evaluate_model(&t.model, &t.store, &scenes, &opts, 5).unwrap();

    let file = ArrayFile::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    let (stored, model, store) = load_model::<f64>(&file).unwrap();
    assert_eq!(stored, cfg);
    let loaded = evaluate_model(&model, &store, &scenes, &opts, 5).unwrap();
    assert_eq!(direct.predictions, loaded.predictions);
    assert_eq!(direct.last().rows, loaded.last().rows);
}

#[test]
fn checkpoint_precision_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    trainer::train(&TrainConfig { steps: 2, ..config() }, Some(dir.path()), None).unwrap();
    let file = ArrayFile::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert!(load_model::<f32>(&file).is_err());
    assert!(Trainer::<f32>::from_checkpoint(&file).is_err());
}

#[test]
fn scene_bundles_round_trip_through_evaluation() {
    let cfg = config();
    let scenes = cfg.data.eval_set(&[3], 2, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut reloaded = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        let d = dir.path().join(format!("scene_{i}"));
        write_scene_bundle(&d, s).unwrap();
        reloaded.push(load_scene_bundle(&d).unwrap());
    }
    let t = Trainer::<f64>::new(cfg).unwrap();
    let opts = EvalOptions::default();
    let a = evaluate_model(&t.model, &t.store, &scenes, &opts, 1).unwrap();
    let b = evaluate_model(&t.model, &t.store, &reloaded, &opts, 1).unwrap();
    // PPM quantizes colours to 8 bits, so predictions agree only approximately;
    // the ground truth must survive exactly up to the CSV's float printing.
    for (x, y) in a.last().rows.iter().zip(&b.last().rows) {
        assert_eq!((x.scene_id, x.cam_idx, x.num_views), (y.scene_id, y.cam_idx, y.num_views));
        assert!((x.rot_err_deg - y.rot_err_deg).abs() < 5.0, "{} vs {}", x.rot_err_deg, y.rot_err_deg);
    }
    for (s, r) in scenes.iter().zip(&reloaded) {
        assert_eq!(s.gt_poses, r.gt_poses);
        assert_eq!(s.category_id, r.category_id);
    }
}
