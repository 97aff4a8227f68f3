//! Model parameters, entry prediction and the negative log joint.
//!
//! All model-side quantities live in standardized units: values are
//! `(y - mean) / std` and times are whatever the [`Standardizer`] maps raw
//! timestamps to. Only [`Model::predict`] converts back.

use std::f64::consts::PI;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::ad::{Tape, Var};
use crate::data::{Dataset, EntryIndex, Observation, Standardizer};
use crate::error::{Error, Result};
use crate::graph::{initial_edge_weight, EmbeddingState, MultiPartiteGraph};
use crate::matrix::Matrix;
use crate::nn::{Mlp, MlpConfig, MlpVars};
use crate::ode::{solve_each, solve_to_times, BoundDynamics, Dynamics, SolverConfig, Terms};
use crate::rng;

/// Standard deviation of the initial embeddings.
pub const INITIAL_STATE_SCALE: f64 = 0.1;

/// Architecture and solver settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub rank: usize,
    pub reaction_hidden: Vec<usize>,
    pub readout_hidden: Vec<usize>,
    pub terms: Terms,
    pub solver: SolverConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            rank: 1,
            reaction_hidden: vec![10],
            readout_hidden: vec![50, 50],
            terms: Terms::Both,
            solver: SolverConfig::default(),
        }
    }
}

impl ModelSpec {
    pub fn reaction_config(&self) -> Result<MlpConfig> {
        MlpConfig::new(self.rank + 1, self.reaction_hidden.clone(), self.rank)
    }

    pub fn readout_config(&self, order: usize) -> Result<MlpConfig> {
        MlpConfig::new(order * self.rank, self.readout_hidden.clone(), 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// One `d_k x R` matrix per mode.
    pub initial_state: Vec<Matrix>,
    /// `E x 1`, aligned with the graph's edge list.
    pub edge_weights: Matrix,
    pub reaction: Vec<Mlp>,
    pub readout: Mlp,
    /// `1 x 1`
    pub log_noise_variance: Matrix,
}

impl ModelParams {
    pub fn init<R: rand::Rng + ?Sized>(graph: &MultiPartiteGraph, spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        if spec.rank == 0 {
            return Err(Error::InvalidArgument("rank must be >= 1".into()));
        }
        let normal = Normal::new(0.0, INITIAL_STATE_SCALE).expect("positive scale");
        let initial_state =
            graph.dims().iter().map(|&d| Matrix::from_fn(d, spec.rank, |_, _| normal.sample(rng))).collect();
        let edge_weights = Matrix::filled(graph.num_edges(), 1, initial_edge_weight(graph));
        let rc = spec.reaction_config()?;
        let reaction = (0..graph.order()).map(|_| Mlp::init(&rc, rng)).collect::<Result<_>>()?;
        let readout = Mlp::init(&spec.readout_config(graph.order())?, rng)?;
        Ok(Self { initial_state, edge_weights, reaction, readout, log_noise_variance: Matrix::scalar(0.0) })
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.item().exp()
    }

    /// Every tensor in a fixed order shared with [`BoundParams::vars`].
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.initial_state.iter().collect();
        out.push(&self.edge_weights);
        for m in &self.reaction {
            out.extend(m.tensors());
        }
        out.extend(self.readout.tensors());
        out.push(&self.log_noise_variance);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.initial_state.iter_mut().collect();
        out.push(&mut self.edge_weights);
        for m in &mut self.reaction {
            out.extend(m.tensors_mut());
        }
        out.extend(self.readout.tensors_mut());
        out.push(&mut self.log_noise_variance);
        out
    }

    /// Number of scalars under the standard normal prior (reaction and readout networks).
    pub fn num_prior_parameters(&self) -> usize {
        self.reaction.iter().map(|m| m.config().num_parameters()).sum::<usize>()
            + self.readout.config().num_parameters()
    }

    pub fn stacked_initial_state(&self) -> Matrix {
        EmbeddingState::from_modes(&self.initial_state).expect("consistent ranks").into_stacked()
    }
}

/// Parameters placed on a tape as gradient leaves.
pub struct BoundParams<'a> {
    initial: Vec<Var>,
    dynamics: BoundDynamics<'a>,
    readout: (&'a Mlp, MlpVars),
    log_noise_variance: Var,
}

impl BoundParams<'_> {
    /// Handles in the order of [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = self.initial.clone();
        out.push(self.dynamics.weights());
        for v in self.dynamics.reaction_vars() {
            out.extend(v.iter());
        }
        out.extend(self.readout.1.iter());
        out.push(self.log_noise_variance);
        out
    }

    fn prior_vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.dynamics.reaction_vars().flat_map(MlpVars::iter).collect();
        out.extend(self.readout.1.iter());
        out
    }
}

/// Predictive distribution of one entry in original units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub noise_variance: f64,
}

/// A fitted model: graph, parameters and the data scaling they were trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub graph: Arc<MultiPartiteGraph>,
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub standardizer: Standardizer,
}

/// Distinct sorted times and, per query, the position of its time.
fn time_plan(times: impl Iterator<Item = f64>) -> (Vec<f64>, Vec<usize>) {
    let raw: Vec<f64> = times.collect();
    let mut uniq = raw.clone();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    let pos = raw.iter().map(|t| uniq.partition_point(|u| u < t)).collect();
    (uniq, pos)
}

fn check_weight(w: f64) -> Result<()> {
    if w > 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("batch weight {w} must be positive and finite")))
    }
}

fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

impl Model {
    /// Fresh parameters drawn from the `init` stream of `seed`.
    pub fn init(graph: Arc<MultiPartiteGraph>, spec: ModelSpec, standardizer: Standardizer, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&graph, &spec, &mut rng::stream(seed, rng::INIT))?;
        Ok(Self { graph, spec, params, standardizer })
    }

    pub fn dims(&self) -> &[usize] {
        self.graph.dims()
    }

    pub fn order(&self) -> usize {
        self.graph.order()
    }

    pub fn dynamics(&self) -> Dynamics<'_> {
        Dynamics {
            graph: &self.graph,
            edge_weights: &self.params.edge_weights,
            reaction: &self.params.reaction,
            terms: self.spec.terms,
        }
    }

    /// Registers every parameter on `tape` as a gradient leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams<'_> {
        let initial = self.params.initial_state.iter().map(|m| tape.parameter(m.clone())).collect();
        let dynamics = self.dynamics().bind(tape, true);
        let readout = (&self.params.readout, self.params.readout.register(tape, true));
        let log_noise_variance = tape.parameter(self.params.log_noise_variance.clone());
        BoundParams { initial, dynamics, readout, log_noise_variance }
    }

    fn validate_index(&self, index: &[usize]) -> Result<()> {
        EntryIndex(index.to_vec()).validate(self.dims())
    }

    /// Predicted means (standardized units) for `(index, model time)` queries,
    /// as an `n x 1` tape node. Solves the dynamics once, to the distinct
    /// query times.
    pub fn predict_on(&self, tape: &mut Tape, bound: &BoundParams<'_>, queries: &[(&[usize], f64)]) -> Result<Var> {
        if queries.is_empty() {
            return Err(Error::InvalidArgument("no queries to predict".into()));
        }
        for (idx, _) in queries {
            self.validate_index(idx)?;
        }
        let (times, pos) = time_plan(queries.iter().map(|q| q.1));
        let u0 = if bound.initial.len() == 1 { bound.initial[0] } else { tape.concat_rows(&bound.initial)? };
        let snaps = solve_to_times(&bound.dynamics, tape, u0, &times, &self.spec.solver)?;
        let all = if snaps.len() == 1 { snaps[0] } else { tape.concat_rows(&snaps)? };
        let v = self.graph.num_vertices();
        let mut parts = Vec::with_capacity(self.order());
        for k in 0..self.order() {
            let rows: Vec<usize> =
                queries.iter().zip(&pos).map(|((idx, _), &p)| p * v + self.graph.offset(k) + idx[k]).collect();
            parts.push(tape.select_rows(all, &rows)?);
        }
        let input = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        let (mlp, vars) = &bound.readout;
        mlp.forward_on(tape, vars, input)
    }

    /// `-[log p(readout) + sum_k log p(reaction_k)] - sum_n w_n log N(y_n | m_n, sigma^2)`
    /// over a weighted batch of standardized observations.
    pub fn negative_log_joint(
        &self,
        tape: &mut Tape,
        bound: &BoundParams<'_>,
        batch: &[(&Observation, f64)],
    ) -> Result<Var> {
        for &(_, w) in batch {
            check_weight(w)?;
        }
        let queries: Vec<(&[usize], f64)> = batch.iter().map(|(o, _)| (o.index.coords(), o.time)).collect();
        let means = self.predict_on(tape, bound, &queries)?;
        let y = tape.constant(Matrix::column(&batch.iter().map(|(o, _)| o.value).collect::<Vec<_>>()));
        let w = tape.constant(Matrix::column(&batch.iter().map(|&(_, w)| w).collect::<Vec<_>>()));
        let total_weight: f64 = batch.iter().map(|&(_, w)| w).sum();

        let resid = tape.sub(y, means)?;
        let sq = tape.square(resid);
        let weighted = tape.mul(sq, w)?;
        let sse = tape.sum_all(weighted);
        let neg_lv = tape.scale(bound.log_noise_variance, -1.0);
        let precision = tape.exp(neg_lv);
        let fit = tape.mul(sse, precision)?;

        let mut terms = vec![(fit, 0.5), (bound.log_noise_variance, 0.5 * total_weight)];
        for p in bound.prior_vars() {
            let sq = tape.square(p);
            terms.push((tape.sum_all(sq), 0.5));
        }
        let constant = 0.5 * ln_2pi() * (total_weight + self.params.num_prior_parameters() as f64);
        terms.push((tape.constant(Matrix::scalar(constant)), 1.0));
        tape.lincomb(&terms)
    }

    /// Off-tape predicted means (standardized units) for `(index, model time)` queries.
    pub fn predict_standardized(&self, queries: &[(&[usize], f64)]) -> Result<Vec<f64>> {
        if queries.is_empty() {
            return Ok(Vec::new());
        }
        for (idx, _) in queries {
            self.validate_index(idx)?;
        }
        let (times, pos) = time_plan(queries.iter().map(|q| q.1));
        let mut by_time = vec![Vec::new(); times.len()];
        for (n, &p) in pos.iter().enumerate() {
            by_time[p].push(n);
        }
        let rank = self.spec.rank;
        let order = self.order();
        let mut input = Matrix::zeros(queries.len(), order * rank);
        solve_each(&self.dynamics(), &self.params.stacked_initial_state(), &times, &self.spec.solver, |i, state| {
            for &n in &by_time[i] {
                let idx = queries[n].0;
                let row = input.row_mut(n);
                for k in 0..order {
                    row[k * rank..(k + 1) * rank].copy_from_slice(state.row(self.graph.offset(k) + idx[k]));
                }
            }
            Ok(())
        })?;
        Ok(self.params.readout.forward(&input)?.into_vec())
    }

    /// Off-tape value of [`Model::negative_log_joint`].
    pub fn negative_log_joint_value(&self, batch: &[(&Observation, f64)]) -> Result<f64> {
        for &(_, w) in batch {
            check_weight(w)?;
        }
        let queries: Vec<(&[usize], f64)> = batch.iter().map(|(o, _)| (o.index.coords(), o.time)).collect();
        let means = self.predict_standardized(&queries)?;
        let lv = self.params.log_noise_variance.item();
        let inv_var = (-lv).exp();
        let mut data = 0.0;
        for ((o, w), m) in batch.iter().zip(&means) {
            data += w * (0.5 * (ln_2pi() + lv) + 0.5 * (o.value - m).powi(2) * inv_var);
        }
        let mut prior = 0.0;
        for m in self.params.reaction.iter().chain(std::iter::once(&self.params.readout)) {
            for t in m.tensors() {
                prior += t.as_slice().iter().map(|v| 0.5 * (ln_2pi() + v * v)).sum::<f64>();
            }
        }
        Ok(data + prior)
    }

    /// Exact negative log joint over a standardized dataset, all weights 1.
    pub fn objective(&self, data: &Dataset) -> Result<f64> {
        let batch: Vec<(&Observation, f64)> = data.observations().iter().map(|o| (o, 1.0)).collect();
        self.negative_log_joint_value(&batch)
    }

    /// Predictions in original units for raw `(index, timestamp)` queries.
    pub fn predict(&self, queries: &[(EntryIndex, f64)]) -> Result<Vec<Prediction>> {
        for (_, t) in queries {
            if !t.is_finite() || *t < 0.0 {
                return Err(Error::InvalidArgument(format!("query time {t} must be finite and non-negative")));
            }
        }
        let q: Vec<(&[usize], f64)> = queries.iter().map(|(i, t)| (i.coords(), self.standardizer.time(*t))).collect();
        let var = self.params.noise_variance() * self.standardizer.value_std.powi(2);
        Ok(self
            .predict_standardized(&q)?
            .into_iter()
            .map(|m| Prediction { mean: self.standardizer.invert_value(m), noise_variance: var })
            .collect())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::checkpoint::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        crate::checkpoint::load(path)
    }

    /// Plain embedding states at sorted model times.
    pub fn snapshot_embeddings(&self, times: &[f64]) -> Result<Vec<EmbeddingState>> {
        let mut out = Vec::with_capacity(times.len());
        solve_each(&self.dynamics(), &self.params.stacked_initial_state(), times, &self.spec.solver, |_, s| {
            out.push(EmbeddingState::new(self.dims(), s.clone())?);
            Ok(())
        })?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use crate::testutil::{central_difference, rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs(i: &[usize], t: f64, y: f64) -> Observation {
        Observation { index: EntryIndex(i.to_vec()), time: t, value: y }
    }

    fn tiny() -> (Model, Vec<Observation>) {
        let data = vec![obs(&[0, 1], 0.2, 0.7), obs(&[1, 0], 0.5, -0.4), obs(&[1, 1], 0.35, 0.1)];
        let ds = Dataset::new(vec![2, 2], data.clone()).unwrap();
        let graph = Arc::new(MultiPartiteGraph::build(&ds));
        let spec = ModelSpec { rank: 2, reaction_hidden: vec![3], readout_hidden: vec![4], ..ModelSpec::default() };
        let mut model = Model::init(graph, spec, Standardizer::identity(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in model.params.tensors_mut() {
            t.as_mut_slice().iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        (model, data)
    }

    #[test]
    fn init_shapes_and_determinism() {
        let ds = Dataset::new(vec![20, 20], vec![obs(&[0, 0], 0.0, 1.0)]).unwrap();
        let graph = Arc::new(MultiPartiteGraph::build(&ds));
        let a = Model::init(graph.clone(), ModelSpec::default(), Standardizer::identity(), 5).unwrap();
        let b = Model::init(graph, ModelSpec::default(), Standardizer::identity(), 5).unwrap();
        assert_eq!(a, b);
        assert!(a.params.initial_state.iter().all(|m| m.shape() == crate::Shape(20, 1)));
        assert_eq!(a.params.noise_variance(), 1.0);
    }

    #[test]
    fn repeated_timestamps_share_one_snapshot() {
        let (t, p) = time_plan([0.5, 0.2, 0.5, 0.0].into_iter());
        assert_eq!(t, vec![0.0, 0.2, 0.5]);
        assert_eq!(p, vec![2, 1, 2, 0]);
    }

    #[test]
    fn zero_readout_predicts_zero() {
        let (mut model, data) = tiny();
        model.params.readout.tensors_mut().for_each(|t| t.as_mut_slice().fill(0.0));
        let q: Vec<(&[usize], f64)> = data.iter().map(|o| (o.index.coords(), o.time)).collect();
        assert!(model.predict_standardized(&q).unwrap().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn out_of_range_index_names_mode() {
        let (model, _) = tiny();
        let err = model.predict_standardized(&[(&[0, 5], 0.1)]).unwrap_err();
        assert!(err.to_string().contains("mode 1"), "{err}");
    }

    #[test]
    fn readout_of_first_embedding_tracks_two_vertex_diffusion() {
        let ds = Dataset::new(vec![1, 1], vec![obs(&[0, 0], 0.0, 0.0)]).unwrap();
        let graph = Arc::new(MultiPartiteGraph::build(&ds));
        let spec = ModelSpec {
            rank: 1,
            readout_hidden: vec![],
            terms: Terms::DiffusionOnly,
            solver: SolverConfig::new(200).unwrap(),
            ..ModelSpec::default()
        };
        let mut model = Model::init(graph, spec.clone(), Standardizer::identity(), 0).unwrap();
        let w = 0.8;
        model.params.edge_weights = Matrix::scalar(w);
        model.params.initial_state = vec![Matrix::scalar(1.0), Matrix::scalar(-0.5)];
        let layer = Layer { weight: Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap(), bias: Matrix::scalar(0.0) };
        model.params.readout = Mlp::from_layers(spec.readout_config(2).unwrap(), vec![layer]).unwrap();
        for t in [0.0, 0.3, 1.7] {
            let got = model.predict_standardized(&[(&[0, 0], t)]).unwrap()[0];
            // Mean is conserved and the difference decays at rate 2w.
            let expect = 0.25 + 0.75 * (-2.0 * w * t).exp();
            assert!((got - expect).abs() < 1e-8, "t={t}: {got} vs {expect}");
        }
    }

    #[test]
    fn perfect_fit_loss_is_normalizing_constants() {
        let (mut model, data) = tiny();
        model.params.reaction.iter_mut().for_each(|m| m.tensors_mut().for_each(|t| t.as_mut_slice().fill(0.0)));
        model.params.readout.tensors_mut().for_each(|t| t.as_mut_slice().fill(0.0));
        model.params.log_noise_variance = Matrix::scalar(0.0);
        let data: Vec<Observation> = data.into_iter().map(|o| Observation { value: 0.0, ..o }).collect();
        let batch: Vec<(&Observation, f64)> = data.iter().map(|o| (o, 1.0)).collect();
        let p = model.params.num_prior_parameters() as f64;
        let expect = 0.5 * 3.0 * ln_2pi() + 0.5 * p * ln_2pi();
        assert!((model.negative_log_joint_value(&batch).unwrap() - expect).abs() < 1e-12);
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let l = model.negative_log_joint(&mut tape, &b, &batch).unwrap();
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn doubling_weights_doubles_only_the_data_term() {
        let (model, data) = tiny();
        let prior = model.negative_log_joint_value(&[]).unwrap();
        let one: Vec<(&Observation, f64)> = data.iter().map(|o| (o, 1.0)).collect();
        let two: Vec<(&Observation, f64)> = data.iter().map(|o| (o, 2.0)).collect();
        let l1 = model.negative_log_joint_value(&one).unwrap();
        let l2 = model.negative_log_joint_value(&two).unwrap();
        assert!(((l2 - prior) - 2.0 * (l1 - prior)).abs() < 1e-10);
        assert!(model.negative_log_joint_value(&[(&data[0], 0.0)]).is_err());
    }

    #[test]
    fn tape_and_plain_objective_agree() {
        let (model, data) = tiny();
        let batch: Vec<(&Observation, f64)> = data.iter().zip([1.0, 2.5, 0.3]).collect();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let l = model.negative_log_joint(&mut tape, &b, &batch).unwrap();
        let plain = model.negative_log_joint_value(&batch).unwrap();
        assert!((tape.value(l).item() - plain).abs() < 1e-12 * plain.abs().max(1.0));
    }

    #[test]
    fn noise_gradient_vanishes_at_weighted_mean_square() {
        let (mut model, data) = tiny();
        let batch: Vec<(&Observation, f64)> = data.iter().zip([1.0, 2.0, 0.5]).collect();
        let q: Vec<(&[usize], f64)> = data.iter().map(|o| (o.index.coords(), o.time)).collect();
        let m = model.predict_standardized(&q).unwrap();
        let sw: f64 = batch.iter().map(|b| b.1).sum();
        let ms: f64 = batch.iter().zip(&m).map(|((o, w), m)| w * (o.value - m).powi(2)).sum::<f64>() / sw;
        model.params.log_noise_variance = Matrix::scalar(ms.ln());
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let l = model.negative_log_joint(&mut tape, &b, &batch).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(*b.vars().last().unwrap()).item().abs() < 1e-12);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let (model, data) = tiny();
        let batch: Vec<(&Observation, f64)> = data.iter().zip([1.0, 1.5, 0.7]).collect();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let l = model.negative_log_joint(&mut tape, &b, &batch).unwrap();
        let g = tape.backward(l).unwrap();
        let vars = b.vars();
        let tensors: Vec<Matrix> = model.params.tensors().into_iter().cloned().collect();
        assert_eq!(vars.len(), tensors.len());
        for (i, (v, base)) in vars.iter().zip(&tensors).enumerate() {
            let fd = central_difference(base, 1e-5, |m| {
                let mut probe = model.clone();
                *probe.params.tensors_mut()[i] = m.clone();
                probe.negative_log_joint_value(&batch).unwrap()
            });
            let err = rel_err(&g.wrt(*v), &fd);
            assert!(err < 1e-4, "tensor {i}: relative error {err}");
        }
    }

    #[test]
    fn snapshots_match_prediction_inputs() {
        let (model, _) = tiny();
        let snaps = model.snapshot_embeddings(&[0.0, 0.35]).unwrap();
        assert_eq!(snaps[0].stacked(), &model.params.stacked_initial_state());
        let input = Matrix::from_vec(1, 4, [snaps[1].entity(0, 1), snaps[1].entity(1, 0)].concat()).unwrap();
        let expect = model.params.readout.forward(&input).unwrap().item();
        assert_eq!(model.predict_standardized(&[(&[1, 0], 0.35)]).unwrap()[0], expect);
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let m = model.predict_on(&mut tape, &b, &[(&[1, 0], 0.35)]).unwrap();
        assert!((tape.value(m).item() - expect).abs() < 1e-14);
        assert!(model.snapshot_embeddings(&[]).unwrap().is_empty());
    }

    #[test]
    fn prediction_is_deterministic_and_order_free() {
        let (model, data) = tiny();
        let q: Vec<(&[usize], f64)> = data.iter().map(|o| (o.index.coords(), o.time)).collect();
        let a = model.predict_standardized(&q).unwrap();
        let rev: Vec<_> = q.iter().rev().cloned().collect();
        let mut b = model.predict_standardized(&rev).unwrap();
        b.reverse();
        assert_eq!(a, b);
    }
}
