use std::sync::Arc;

use difftensor::analysis;
use difftensor::data::{self, EntryIndex};
use difftensor::graph::MultiPartiteGraph;
use difftensor::model::{Model, ModelSpec};
use difftensor::synth::{self, SynthSpec};
use difftensor::train::{self, Control, SamplerMode, TrainConfig};

fn small_run(sampler: SamplerMode, reweight: bool) -> (Model, Vec<train::EpochRecord>, difftensor::data::Dataset) {
    let spec = SynthSpec { entities_per_mode: 6, num_train: 300, num_test: 60, seed: 4, ..SynthSpec::default() };
    let (train_raw, test_raw, _) = synth::generate(&spec).unwrap();
    let (s, train_std, test_std) = data::standardize_pair(&train_raw, &test_raw, false).unwrap();
    let graph = Arc::new(MultiPartiteGraph::build(&train_std));
    let model_spec = ModelSpec { reaction_hidden: vec![4], readout_hidden: vec![8], ..ModelSpec::default() };
    let model = Model::init(graph, model_spec, s, 2).unwrap();
    let cfg = TrainConfig { epochs: 4, batch_size: 20, sampler, reweight, ..TrainConfig::default() };
    let out = train::train(model, &train_std, Some(&test_std), &cfg, |_, _| Ok(Control::Continue)).unwrap();
    (out.model, out.history, test_raw)
}

#[test]
fn trained_model_survives_a_checkpoint_round_trip() {
    let (model, history, test) = small_run(SamplerMode::Stratified, true);
    assert_eq!(history.len(), 4);
    assert!(history.iter().all(|h| h.train_loss.is_finite() && h.eval_nrmse.is_some()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(analysis::evaluate(&loaded, &test).unwrap(), analysis::evaluate(&model, &test).unwrap());
}

#[test]
fn standardized_eval_matches_the_report() {
    let (model, history, test) = small_run(SamplerMode::Stratified, true);
    let report = analysis::evaluate(&model, &test).unwrap();
    let last = history.last().unwrap().eval_nrmse.unwrap();
    assert!((report.nrmse - last).abs() < 1e-9, "{} vs {last}", report.nrmse);
}

#[test]
fn sampler_variants_train_differently() {
    let (a, ..) = small_run(SamplerMode::Stratified, true);
    let (b, ..) = small_run(SamplerMode::Naive, true);
    assert_ne!(a.params, b.params);
    // Continuous timestamps give singleton buckets, where |T|/B * 1 = N/B.
    let (c, ..) = small_run(SamplerMode::Stratified, false);
    assert_eq!(a.params, c.params);
}

#[test]
fn time_zero_prediction_reads_the_initial_state() {
    let (model, ..) = small_run(SamplerMode::Stratified, true);
    let idx = EntryIndex(vec![1, 4]);
    let p = model.predict(&[(idx, 0.0)]).unwrap()[0];
    let u = &model.params.initial_state;
    let input = difftensor::Matrix::from_vec(1, 2, vec![u[0].get(1, 0), u[1].get(4, 0)]).unwrap();
    let direct = model.params.readout.forward(&input).unwrap().item();
    assert_eq!(p.mean, model.standardizer.invert_value(direct));
    assert!(p.noise_variance > 0.0);
}
