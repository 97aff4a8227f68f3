//! Mini-batch sampling, ADAM, plateau learning-rate decay and the training loop.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use rand::Rng as _;

use crate::ad::Tape;
use crate::data::{Dataset, Observation, TimeIndex};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Model, ModelParams};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplerMode {
    /// `B` distinct timestamps, one observation from each.
    #[default]
    Stratified,
    /// `B` observations uniformly without replacement.
    Naive,
}

impl SamplerMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stratified" => Ok(Self::Stratified),
            "naive" => Ok(Self::Naive),
            other => Err(Error::InvalidArgument(format!("unknown sampler {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stratified => "stratified",
            Self::Naive => "naive",
        }
    }
}

/// Weight of one stratified draw from a bucket of `bucket_size` observations.
pub fn stratified_weight(num_times: usize, batch_size: usize, bucket_size: usize) -> f64 {
    num_times as f64 / batch_size as f64 * bucket_size as f64
}

/// Weight of one naive draw.
pub fn naive_weight(num_observations: usize, batch_size: usize) -> f64 {
    num_observations as f64 / batch_size as f64
}

pub struct Sampler {
    index: TimeIndex,
    num_observations: usize,
    batch_size: usize,
    mode: SamplerMode,
    reweight: bool,
    rng: Rng,
}

impl Sampler {
    /// With `reweight` off, stratified draws get the naive weight `N / B`.
    pub fn new(data: &Dataset, batch_size: usize, mode: SamplerMode, reweight: bool, rng: Rng) -> Result<Self> {
        let index = TimeIndex::build(data);
        let limit = match mode {
            SamplerMode::Stratified => index.len(),
            SamplerMode::Naive => data.len(),
        };
        if batch_size == 0 || batch_size > limit {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} must be in [1, {limit}] for the {} sampler",
                mode.name()
            )));
        }
        Ok(Self { index, num_observations: data.len(), batch_size, mode, reweight, rng })
    }

    pub fn time_index(&self) -> &TimeIndex {
        &self.index
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Stratified epochs cover the distinct timestamps once in expectation,
    /// naive epochs the observations.
    pub fn steps_per_epoch(&self) -> usize {
        let n = match self.mode {
            SamplerMode::Stratified => self.index.len(),
            SamplerMode::Naive => self.num_observations,
        };
        n.div_ceil(self.batch_size)
    }

    /// `(observation id, weight)` pairs.
    pub fn sample(&mut self) -> Vec<(usize, f64)> {
        let b = self.batch_size;
        match self.mode {
            SamplerMode::Stratified => {
                let t = self.index.len();
                index::sample(&mut self.rng, t, b)
                    .into_iter()
                    .map(|j| {
                        let bucket = &self.index.buckets()[j];
                        let id = bucket[self.rng.random_range(0..bucket.len())];
                        let w = if self.reweight {
                            stratified_weight(t, b, bucket.len())
                        } else {
                            naive_weight(self.num_observations, b)
                        };
                        (id, w)
                    })
                    .collect()
            }
            SamplerMode::Naive => {
                let w = naive_weight(self.num_observations, b);
                index::sample(&mut self.rng, self.num_observations, b).into_iter().map(|i| (i, w)).collect()
            }
        }
    }
}

/// Bias-corrected ADAM over a fixed list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[&Matrix], lr: f64) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    /// Applies one update. Shape mismatches and non-finite gradients reject
    /// the step and leave both parameters and moments untouched.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (g, m)) in grads.iter().zip(&self.m).enumerate() {
            if g.shape() != m.shape() {
                return Err(Error::shape("adam gradient", g.shape(), m.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { time: f64::NAN, context: format!("gradient of tensor {i}") });
            }
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Halves the learning rate after `patience` epochs without relative improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    pub threshold: f64,
    pub min_lr: f64,
    pub max_lr: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64, min_lr: f64, max_lr: f64) -> Self {
        Self { patience, factor, threshold: 1e-6, min_lr, max_lr, best: f64::INFINITY, stale: 0 }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Returns the learning rate to use next.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if !self.best.is_finite() || loss < self.best - self.threshold * self.best.abs() {
            self.best = loss;
            self.stale = 0;
            return lr.clamp(self.min_lr, self.max_lr);
        }
        self.stale += 1;
        if self.stale > self.patience {
            self.stale = 0;
            return (lr * self.factor).clamp(self.min_lr, self.max_lr);
        }
        lr.clamp(self.min_lr, self.max_lr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sampler: SamplerMode,
    pub reweight: bool,
    pub lr: f64,
    pub patience: usize,
    pub decay: f64,
    pub min_lr: f64,
    pub max_lr: f64,
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 50,
            sampler: SamplerMode::Stratified,
            reweight: true,
            lr: 1e-2,
            patience: 50,
            decay: 0.5,
            min_lr: 1e-4,
            max_lr: 1e-1,
            max_retries: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr) {
            return bad(format!("lr bounds [{}, {}] are invalid", self.min_lr, self.max_lr));
        }
        if !(self.lr >= self.min_lr && self.lr <= self.max_lr) {
            return bad(format!("lr {} outside [{}, {}]", self.lr, self.min_lr, self.max_lr));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay factor {} must be in (0, 1)", self.decay));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_nrmse: Option<f64>,
    pub lr: f64,
    pub epoch_seconds: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,eval_nrmse,lr,epoch_seconds\n");
    for r in history {
        let eval = r.eval_nrmse.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, eval, r.lr, r.epoch_seconds);
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

/// What the per-epoch callback asks the loop to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
}

/// RMSE of standardized predictions, i.e. RMSE in units of the training std.
pub fn standardized_rmse(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let q: Vec<(&[usize], f64)> = data.observations().iter().map(|o| (o.index.coords(), o.time)).collect();
    let pred = model.predict_standardized(&q)?;
    let sse: f64 = pred.iter().zip(data.observations()).map(|(p, o)| (p - o.value).powi(2)).sum();
    Ok((sse / data.len() as f64).sqrt())
}

struct Snapshot {
    params: ModelParams,
    adam: Adam,
}

/// Loss and gradients at the current parameters, or the numerical failure.
fn loss_and_grads(model: &Model, tape: &mut Tape, batch: &[(&Observation, f64)]) -> Result<(f64, Vec<Matrix>)> {
    tape.clear();
    let bound = model.bind(tape);
    let loss = model.negative_log_joint(tape, &bound, batch)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { time: f64::NAN, context: "batch loss".into() });
    }
    let grads = tape.backward(loss)?;
    Ok((value, bound.vars().into_iter().map(|v| grads.wrt(v)).collect()))
}

/// Trains `model` on standardized data. `on_epoch` sees each finished epoch
/// and may stop the loop.
pub fn train(
    mut model: Model,
    train_data: &Dataset,
    eval_data: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> Result<Control>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(TrainOutcome { model, history: Vec::new() });
    }
    let mut sampler = Sampler::new(
        train_data,
        config.batch_size,
        config.sampler,
        config.reweight,
        rng::stream(config.seed, rng::SAMPLER),
    )?;
    let mut adam = Adam::new(&model.params.tensors(), config.lr);
    let mut scheduler = PlateauScheduler::new(config.patience, config.decay, config.min_lr, config.max_lr);
    let mut tape = Tape::new();
    let mut history = Vec::with_capacity(config.epochs);
    let mut previous: Option<Snapshot> = None;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        for _ in 0..sampler.steps_per_epoch() {
            let ids = sampler.sample();
            let batch: Vec<(&Observation, f64)> = ids.iter().map(|&(i, w)| (train_data.get(i), w)).collect();
            let mut retries = 0;
            loop {
                match loss_and_grads(&model, &mut tape, &batch) {
                    Ok((_, grads)) => {
                        let before = Snapshot { params: model.params.clone(), adam: adam.clone() };
                        match adam.step(model.params.tensors_mut(), &grads) {
                            Ok(()) => {
                                previous = Some(before);
                                break;
                            }
                            Err(e) if e.is_numerical() => {}
                            Err(e) => return Err(e),
                        }
                    }
                    Err(e) if e.is_numerical() => {}
                    Err(e) => return Err(e),
                }
                retries += 1;
                if retries > config.max_retries {
                    return Err(Error::TrainingAborted(format!(
                        "non-finite loss at epoch {epoch} after {} learning-rate halvings (lr = {:e})",
                        config.max_retries, adam.lr
                    )));
                }
                // Undo the update that led here and retry it at half the rate.
                let lr = adam.lr * 0.5;
                if let Some(s) = previous.take() {
                    model.params = s.params;
                    adam = s.adam;
                }
                adam.lr = lr;
            }
        }
        let train_loss = model.objective(train_data).map_err(|e| {
            if e.is_numerical() {
                Error::TrainingAborted(format!("full-data objective at epoch {epoch}: {e}"))
            } else {
                e
            }
        })?;
        if !train_loss.is_finite() {
            return Err(Error::TrainingAborted(format!("non-finite full-data objective at epoch {epoch}")));
        }
        let eval_nrmse = eval_data.map(|d| standardized_rmse(&model, d)).transpose()?;
        adam.lr = scheduler.step(train_loss, adam.lr);
        let record =
            EpochRecord { epoch, train_loss, eval_nrmse, lr: adam.lr, epoch_seconds: started.elapsed().as_secs_f64() };
        let control = on_epoch(&record, &model)?;
        history.push(record);
        if control == Control::Stop {
            break;
        }
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EntryIndex, Standardizer};
    use crate::graph::MultiPartiteGraph;
    use crate::model::ModelSpec;
    use std::collections::HashSet;
    use std::sync::Arc;

    fn obs(i: &[usize], t: f64, y: f64) -> Observation {
        Observation { index: EntryIndex(i.to_vec()), time: t, value: y }
    }

    /// Three timestamps with buckets of sizes (1, 2, 1).
    fn toy() -> Dataset {
        Dataset::new(
            vec![2, 2],
            vec![obs(&[0, 0], 0.1, 0.3), obs(&[0, 1], 0.4, -1.2), obs(&[1, 0], 0.4, 0.8), obs(&[1, 1], 0.9, 2.0)],
        )
        .unwrap()
    }

    fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        if n < k {
            return vec![];
        }
        let mut out = combinations(n - 1, k);
        for mut c in combinations(n - 1, k - 1) {
            c.push(n - 1);
            out.push(c);
        }
        out
    }

    #[test]
    fn stratified_estimator_is_unbiased_by_enumeration() {
        let data = toy();
        let ti = TimeIndex::build(&data);
        assert_eq!(ti.buckets().iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 1]);
        let loglik = [-0.7, -1.9, -0.2, -3.3];
        let full: f64 = loglik.iter().sum();
        let (t, b) = (ti.len(), 2);
        let mut expectation = 0.0;
        let subsets = combinations(t, b);
        for subset in &subsets {
            let p_subset = 1.0 / subsets.len() as f64;
            // Expand every choice of one observation per selected bucket.
            let mut choices: Vec<(f64, f64)> = vec![(1.0, 0.0)];
            for &j in subset {
                let bucket = &ti.buckets()[j];
                let w = stratified_weight(t, b, bucket.len());
                choices = choices
                    .iter()
                    .flat_map(|&(p, s)| bucket.iter().map(move |&n| (p / bucket.len() as f64, s + w * loglik[n])))
                    .collect();
            }
            expectation += choices.iter().map(|(p, s)| p_subset * p * s).sum::<f64>();
        }
        assert!((expectation - full).abs() < 1e-12, "{expectation} vs {full}");
    }

    #[test]
    fn naive_estimator_is_unbiased_by_enumeration() {
        let loglik = [-0.7, -1.9, -0.2, -3.3];
        let full: f64 = loglik.iter().sum();
        let subsets = combinations(4, 3);
        let mean = subsets.iter().map(|s| s.iter().map(|&n| naive_weight(4, 3) * loglik[n]).sum::<f64>()).sum::<f64>()
            / subsets.len() as f64;
        assert!((mean - full).abs() < 1e-12);
    }

    #[test]
    fn sampler_weights_follow_the_bucket_sizes() {
        let data = toy();
        let mut s = Sampler::new(&data, 2, SamplerMode::Stratified, true, rng::stream(1, rng::SAMPLER)).unwrap();
        for _ in 0..200 {
            for (id, w) in s.sample() {
                let size = if data.get(id).time == 0.4 { 2 } else { 1 };
                assert_eq!(w, stratified_weight(3, 2, size));
            }
        }
        let mut s = Sampler::new(&data, 2, SamplerMode::Stratified, false, rng::stream(1, rng::SAMPLER)).unwrap();
        assert!(s.sample().iter().all(|&(_, w)| w == 2.0));
    }

    #[test]
    fn stratified_batches_have_distinct_times() {
        let data = toy();
        let mut s = Sampler::new(&data, 2, SamplerMode::Stratified, true, rng::stream(2, rng::SAMPLER)).unwrap();
        for _ in 0..1000 {
            let times: HashSet<u64> = s.sample().iter().map(|&(i, _)| data.get(i).time.to_bits()).collect();
            assert_eq!(times.len(), 2);
        }
    }

    #[test]
    fn full_stratified_batch_of_singletons_is_a_permutation() {
        let data = Dataset::new(vec![3, 1], (0..3).map(|i| obs(&[i, 0], i as f64, 0.0)).collect()).unwrap();
        let mut s = Sampler::new(&data, 3, SamplerMode::Stratified, true, rng::stream(3, rng::SAMPLER)).unwrap();
        let batch = s.sample();
        let mut ids: Vec<usize> = batch.iter().map(|b| b.0).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);
        assert!(batch.iter().all(|b| b.1 == 1.0));
    }

    #[test]
    fn batch_size_is_validated() {
        let data = toy();
        assert!(Sampler::new(&data, 4, SamplerMode::Stratified, true, rng::stream(0, "x")).is_err());
        assert!(Sampler::new(&data, 4, SamplerMode::Naive, true, rng::stream(0, "x")).is_ok());
        assert!(Sampler::new(&data, 0, SamplerMode::Naive, true, rng::stream(0, "x")).is_err());
    }

    #[test]
    fn naive_batches_are_without_replacement() {
        let data = toy();
        let mut s = Sampler::new(&data, 3, SamplerMode::Naive, true, rng::stream(4, rng::SAMPLER)).unwrap();
        for _ in 0..100 {
            let b = s.sample();
            let ids: HashSet<usize> = b.iter().map(|x| x.0).collect();
            assert_eq!(ids.len(), 3);
            assert!(b.iter().all(|x| x.1 == 4.0 / 3.0));
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let orig = p.clone();
        let mut adam = Adam::new(&[&p], 1e-2);
        adam.step(vec![&mut p], &[Matrix::zeros(1, 3)]).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_the_sign() {
        let mut p = Matrix::zeros(1, 3);
        let g = Matrix::from_vec(1, 3, vec![3.0, -0.01, 250.0]).unwrap();
        let mut adam = Adam::new(&[&p], 0.05);
        adam.step(vec![&mut p], std::slice::from_ref(&g)).unwrap();
        // At t = 1 the corrected moments are g and g^2.
        for (x, gi) in p.as_slice().iter().zip(g.as_slice()) {
            let expect = -0.05 * gi / (gi.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = Matrix::zeros(1, 2);
        let mut adam = Adam::new(&[&p], 0.1);
        let before = adam.clone();
        let g = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(adam.step(vec![&mut p], &[g]).is_err());
        assert_eq!(adam, before);
        assert_eq!(p, Matrix::zeros(1, 2));
    }

    #[test]
    fn scheduler_rules() {
        let mut s = PlateauScheduler::new(3, 0.5, 1e-4, 1e-1);
        let mut lr = 1e-2;
        for i in 0..20 {
            lr = s.step(10.0 - i as f64, lr);
        }
        assert_eq!(lr, 1e-2);

        let mut s = PlateauScheduler::new(3, 0.5, 1e-4, 1e-1);
        let mut lr = 1e-2;
        lr = s.step(1.0, lr);
        for _ in 0..4 {
            lr = s.step(1.0, lr);
        }
        assert_eq!(lr, 5e-3);

        let mut s = PlateauScheduler::new(0, 0.5, 1e-4, 1e-1);
        let mut lr = 1e-4;
        for _ in 0..5 {
            lr = s.step(1.0, lr);
        }
        assert_eq!(lr, 1e-4);
    }

    fn toy_model(data: &Dataset) -> Model {
        let graph = Arc::new(MultiPartiteGraph::build(data));
        let spec = ModelSpec { rank: 1, reaction_hidden: vec![4], readout_hidden: vec![6], ..ModelSpec::default() };
        Model::init(graph, spec, Standardizer::identity(), 9).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = toy();
        let m = toy_model(&data);
        let cfg = TrainConfig { epochs: 0, batch_size: 2, ..TrainConfig::default() };
        let out = train(m.clone(), &data, None, &cfg, |_, _| Ok(Control::Continue)).unwrap();
        assert_eq!(out.model, m);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_seeded_and_reduces_loss() {
        let data = toy();
        let cfg = TrainConfig { epochs: 40, batch_size: 2, seed: 5, ..TrainConfig::default() };
        let run = || train(toy_model(&data), &data, Some(&data), &cfg, |_, _| Ok(Control::Continue)).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.model, b.model);
        assert!(a.history.iter().all(|r| r.train_loss.is_finite()));
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
        let csv = history_csv(&a.history);
        assert_eq!(csv.lines().count(), 41);
        assert!(csv.starts_with("epoch,train_loss,eval_nrmse,lr,epoch_seconds"));
    }

    #[test]
    fn callback_can_stop() {
        let data = toy();
        let cfg = TrainConfig { epochs: 10, batch_size: 2, ..TrainConfig::default() };
        let out = train(toy_model(&data), &data, None, &cfg, |r, _| {
            Ok(if r.epoch == 3 { Control::Stop } else { Control::Continue })
        })
        .unwrap();
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn divergence_halves_lr_then_aborts() {
        let data = toy();
        let mut m = toy_model(&data);
        // Edge weights this negative blow the state up before t = 0.9.
        m.params.edge_weights.as_mut_slice().fill(-1e6);
        let cfg = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
        let err = train(m, &data, None, &cfg, |_, _| Ok(Control::Continue)).err().unwrap();
        assert!(matches!(err, Error::TrainingAborted(_)), "{err}");
    }
}
