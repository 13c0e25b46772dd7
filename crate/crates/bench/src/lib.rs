//! Fixtures shared by the benchmarks.

use sparsepose::autodiff::{Elem, ParamStore};
use sparsepose::synthdata::Split;
use sparsepose::{ModelConfig, Result, SceneSample, SparsePose, TrainConfig};

/// A held-out scene with `views` cameras rendered at the size `config` expects.
pub fn scene(config: &TrainConfig, views: usize, seed: u64) -> Result<SceneSample> {
    let cat = config.data.categories(Split::Test).start;
    let spec = config.data.spec(cat, seed, views);
    sparsepose::synthdata::generate_scene(&spec, seed)
}

/// A freshly initialized model and its parameters.
pub fn model<E: Elem>(config: &ModelConfig, seed: u64) -> Result<(SparsePose, ParamStore<E>)> {
    let mut store = ParamStore::new();
    let model = SparsePose::new(config.clone(), &mut store, seed)?;
    Ok((model, store))
}
