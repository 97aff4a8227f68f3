//! Joint diffusion-reaction dynamics and a differentiable fixed-step RK4
//! integrator.
//!
//! Integration always walks the global grid `0, h, 2h, ...` with
//! `h = 1 / substeps_per_unit`. A requested time `t` that falls between grid
//! points is reached by one extra branch step of length `t - floor(t/h) h`
//! from the preceding grid state; the main trajectory then continues from the
//! grid point, not from the branch. The state reported at `t` is therefore a
//! pure function of `t` and the parameters, independent of whichever other
//! times were requested alongside it.

use std::sync::Arc;

use crate::ad::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::MultiPartiteGraph;
use crate::matrix::{Matrix, Shape};
use crate::nn::{Mlp, MlpVars};

/// Which terms of the dynamics are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Terms {
    #[default]
    Both,
    DiffusionOnly,
    ReactionOnly,
}

impl Terms {
    pub fn from_flags(diffusion: bool, reaction: bool) -> Result<Self> {
        match (diffusion, reaction) {
            (true, true) => Ok(Terms::Both),
            (true, false) => Ok(Terms::DiffusionOnly),
            (false, true) => Ok(Terms::ReactionOnly),
            (false, false) => {
                Err(Error::InvalidArgument("at least one of diffusion and reaction must be enabled".into()))
            }
        }
    }

    pub fn diffusion(self) -> bool {
        matches!(self, Terms::Both | Terms::DiffusionOnly)
    }

    pub fn reaction(self) -> bool {
        matches!(self, Terms::Both | Terms::ReactionOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Terms::Both => "both",
            Terms::DiffusionOnly => "diffusion-only",
            Terms::ReactionOnly => "reaction-only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Terms::Both),
            "diffusion-only" => Ok(Terms::DiffusionOnly),
            "reaction-only" => Ok(Terms::ReactionOnly),
            other => Err(Error::InvalidArgument(format!("unknown dynamics terms {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub substeps_per_unit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { substeps_per_unit: 20 }
    }
}

impl SolverConfig {
    pub fn new(substeps_per_unit: usize) -> Result<Self> {
        if substeps_per_unit == 0 {
            return Err(Error::InvalidArgument("substeps_per_unit must be >= 1".into()));
        }
        Ok(Self { substeps_per_unit })
    }

    pub fn step(&self) -> f64 {
        1.0 / self.substeps_per_unit as f64
    }

    #[inline]
    fn grid_time(&self, i: usize) -> f64 {
        i as f64 / self.substeps_per_unit as f64
    }

    /// Index of the last grid point not after `t`.
    #[inline]
    fn grid_floor(&self, t: f64) -> usize {
        let i = (t * self.substeps_per_unit as f64).floor() as usize;
        if self.grid_time(i) > t {
            i.saturating_sub(1)
        } else {
            i
        }
    }

    /// Number of RK4 steps taken to reach every time in `times`.
    pub fn step_count(&self, times: &[f64]) -> usize {
        let mut last = 0;
        let mut n = 0;
        for &t in times {
            let g = self.grid_floor(t);
            n += g.saturating_sub(last);
            last = last.max(g);
            if t > self.grid_time(g) {
                n += 1;
            }
        }
        n
    }
}

/// Right-hand side `du/dt = f(u, t)` evaluated on a tape.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, state: Var, t: f64) -> Result<Var>;
}

impl<F> VectorField for F
where
    F: Fn(&mut Tape, Var, f64) -> Result<Var>,
{
    fn eval(&self, tape: &mut Tape, state: Var, t: f64) -> Result<Var> {
        self(tape, state, t)
    }
}

/// Parameter values of the joint dynamics.
#[derive(Clone, Copy)]
pub struct Dynamics<'a> {
    pub graph: &'a Arc<MultiPartiteGraph>,
    /// `E x 1`
    pub edge_weights: &'a Matrix,
    /// One reaction network per mode.
    pub reaction: &'a [Mlp],
    pub terms: Terms,
}

/// [`Dynamics`] with its parameters placed on a tape.
pub struct BoundDynamics<'a> {
    graph: &'a Arc<MultiPartiteGraph>,
    weights: Var,
    reaction: &'a [Mlp],
    reaction_vars: Vec<MlpVars>,
    terms: Terms,
}

/// One network layer: `h W^T + b`, then `tanh` unless it is the output layer.
fn layer_forward(h: &Matrix, weight: &Matrix, bias: &Matrix, last: bool) -> Result<Matrix> {
    let mut z = h.matmul_t(weight)?;
    let b = bias.as_slice();
    for r in 0..z.rows() {
        for (v, &bb) in z.row_mut(r).iter_mut().zip(b) {
            *v += bb;
        }
    }
    Ok(if last { z } else { z.map(f64::tanh) })
}

/// Network input for mode `k`: its embedding rows with `t` appended.
fn reaction_input(graph: &MultiPartiteGraph, state: &Matrix, k: usize, t: f64) -> Matrix {
    let r = state.cols();
    let off = graph.offset(k);
    Matrix::from_fn(graph.dims()[k], r + 1, |i, c| if c < r { state.get(off + i, c) } else { t })
}

/// Stacked reaction outputs. With `keep`, also returns every layer input per
/// mode for the backward pass.
fn reaction_forward(
    graph: &MultiPartiteGraph,
    layers: &[Vec<(&Matrix, &Matrix)>],
    state: &Matrix,
    t: f64,
    keep: bool,
) -> Result<(Matrix, Vec<Vec<Matrix>>)> {
    let r = state.cols();
    let mut out = Matrix::zeros(state.rows(), r);
    let mut acts = Vec::with_capacity(if keep { layers.len() } else { 0 });
    for (k, net) in layers.iter().enumerate() {
        let mut h = reaction_input(graph, state, k, t);
        let mut inputs = Vec::with_capacity(if keep { net.len() } else { 0 });
        for (i, &(w, b)) in net.iter().enumerate() {
            let next = layer_forward(&h, w, b, i + 1 == net.len())?;
            if keep {
                inputs.push(std::mem::replace(&mut h, next));
            } else {
                h = next;
            }
        }
        let off = graph.offset(k);
        for i in 0..h.rows() {
            out.row_mut(off + i).copy_from_slice(h.row(i));
        }
        if keep {
            acts.push(inputs);
        }
    }
    Ok((out, acts))
}

fn check_reaction(graph: &MultiPartiteGraph, reaction: &[Mlp], rank: usize) -> Result<()> {
    if reaction.len() != graph.order() {
        return Err(Error::InvalidArgument(format!(
            "{} reaction networks for {} modes",
            reaction.len(),
            graph.order()
        )));
    }
    for mlp in reaction {
        let cfg = mlp.config();
        if cfg.input_dim != rank + 1 || cfg.output_dim != rank {
            return Err(Error::shape("reaction network", Shape(cfg.input_dim, cfg.output_dim), Shape(rank + 1, rank)));
        }
    }
    Ok(())
}

/// All per-mode reaction networks as one tape node. Parents are the state
/// followed by each network's `(weight, bias)` pairs, mode by mode.
struct ReactionOp {
    graph: Arc<MultiPartiteGraph>,
    layers_per_net: usize,
    /// Per mode, the input of every layer.
    acts: Vec<Vec<Matrix>>,
}

impl CustomOp for ReactionOp {
    fn name(&self) -> &'static str {
        "reaction"
    }

    fn backward(&self, parents: &[&Matrix], _output: &Matrix, grad: &Matrix, needs: &[bool]) -> Vec<Option<Matrix>> {
        let l = self.layers_per_net;
        let r = grad.cols();
        let mut out: Vec<Option<Matrix>> = vec![None; parents.len()];
        let mut dstate = needs[0].then(|| Matrix::zeros(grad.rows(), r));
        for (k, inputs) in self.acts.iter().enumerate() {
            let off = self.graph.offset(k);
            let d = self.graph.dims()[k];
            let mut g = Matrix::from_vec(d, r, grad.as_slice()[off * r..(off + d) * r].to_vec()).expect("block");
            for i in (0..l).rev() {
                let wi = 1 + k * 2 * l + 2 * i;
                let h = &inputs[i];
                if needs[wi] {
                    out[wi] = Some(g.t_matmul(h).expect("shape"));
                }
                if needs[wi + 1] {
                    out[wi + 1] = Some(g.column_sums());
                }
                if i == 0 && dstate.is_none() {
                    break;
                }
                let back = g.matmul(parents[wi]).expect("shape");
                if i > 0 {
                    g = back.zip_map(h, |x, y| x * (1.0 - y * y));
                } else if let Some(ds) = dstate.as_mut() {
                    // Drop the time column.
                    for row in 0..d {
                        ds.row_mut(off + row).copy_from_slice(&back.row(row)[..r]);
                    }
                }
            }
        }
        out[0] = dstate;
        out
    }
}

impl<'a> Dynamics<'a> {
    /// Registers the parameters on `tape` as gradient leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDynamics<'a> {
        let weights = if trainable {
            tape.parameter(self.edge_weights.clone())
        } else {
            tape.constant(self.edge_weights.clone())
        };
        let reaction_vars = self.reaction.iter().map(|m| m.register(tape, trainable)).collect();
        BoundDynamics { graph: self.graph, weights, reaction: self.reaction, reaction_vars, terms: self.terms }
    }

    /// Plain-valued `(W - A) U + F(U, t)`, bitwise equal to the tape evaluation.
    pub fn eval_values(&self, state: &Matrix, t: f64) -> Result<Matrix> {
        match self.terms {
            Terms::DiffusionOnly => self.graph.apply_diffusion(self.edge_weights.as_slice(), state),
            Terms::ReactionOnly => self.reaction_values(state, t),
            Terms::Both => {
                let d = self.graph.apply_diffusion(self.edge_weights.as_slice(), state)?;
                let r = self.reaction_values(state, t)?;
                Ok(d.zip_map(&r, |x, y| x + y))
            }
        }
    }

    fn reaction_values(&self, state: &Matrix, t: f64) -> Result<Matrix> {
        check_reaction(self.graph, self.reaction, state.cols())?;
        let layers: Vec<Vec<(&Matrix, &Matrix)>> =
            self.reaction.iter().map(|m| m.layers().iter().map(|l| (&l.weight, &l.bias)).collect()).collect();
        Ok(reaction_forward(self.graph, &layers, state, t, false)?.0)
    }
}

impl BoundDynamics<'_> {
    pub fn weights(&self) -> Var {
        self.weights
    }

    pub fn reaction_vars(&self) -> impl Iterator<Item = &MlpVars> {
        self.reaction_vars.iter()
    }

    fn reaction_term(&self, tape: &mut Tape, state: Var, t: f64) -> Result<Var> {
        check_reaction(self.graph, self.reaction, state.cols())?;
        let mut parents = vec![state];
        for v in &self.reaction_vars {
            parents.extend(v.iter());
        }
        let layers: Vec<Vec<(&Matrix, &Matrix)>> = self
            .reaction_vars
            .iter()
            .map(|v| {
                let ids: Vec<Var> = v.iter().collect();
                ids.chunks(2).map(|wb| (tape.value(wb[0]), tape.value(wb[1]))).collect()
            })
            .collect();
        let (value, acts) = reaction_forward(self.graph, &layers, tape.value(state), t, true)?;
        let op = ReactionOp {
            graph: Arc::clone(self.graph),
            layers_per_net: self.reaction.first().map_or(0, |m| m.layers().len()),
            acts,
        };
        Ok(tape.custom(Box::new(op), &parents, value))
    }
}

impl VectorField for BoundDynamics<'_> {
    /// `(W - A) U + F(U, t)`, with disabled terms omitted.
    fn eval(&self, tape: &mut Tape, state: Var, t: f64) -> Result<Var> {
        if state.rows() != self.graph.num_vertices() {
            return Err(Error::shape("dynamics state", state.shape(), Shape(self.graph.num_vertices(), state.cols())));
        }
        match self.terms {
            Terms::DiffusionOnly => self.graph.diffuse(tape, self.weights, state),
            Terms::ReactionOnly => self.reaction_term(tape, state, t),
            Terms::Both => {
                let d = self.graph.diffuse(tape, self.weights, state)?;
                let r = self.reaction_term(tape, state, t)?;
                tape.add(d, r)
            }
        }
    }
}

/// One classical Runge-Kutta step of size `h` from `(state, t)`.
pub fn rk4_step<F: VectorField + ?Sized>(field: &F, tape: &mut Tape, state: Var, t: f64, h: f64) -> Result<Var> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {h} must be positive")));
    }
    let half = 0.5 * h;
    let k1 = field.eval(tape, state, t)?;
    let y2 = tape.lincomb(&[(state, 1.0), (k1, half)])?;
    let k2 = field.eval(tape, y2, t + half)?;
    let y3 = tape.lincomb(&[(state, 1.0), (k2, half)])?;
    let k3 = field.eval(tape, y3, t + half)?;
    let y4 = tape.lincomb(&[(state, 1.0), (k3, h)])?;
    let k4 = field.eval(tape, y4, t + h)?;
    let sixth = h / 6.0;
    tape.lincomb(&[(state, 1.0), (k1, sixth), (k2, 2.0 * sixth), (k3, 2.0 * sixth), (k4, sixth)])
}

fn lincomb_values(terms: &[(&Matrix, f64)]) -> Matrix {
    let mut out = Matrix::zeros(terms[0].0.rows(), terms[0].0.cols());
    for &(m, c) in terms {
        out.axpy(c, m);
    }
    out
}

/// [`rk4_step`] on plain values, with the same arithmetic order.
pub fn rk4_step_values(dynamics: &Dynamics<'_>, state: &Matrix, t: f64, h: f64) -> Result<Matrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step size {h} must be positive")));
    }
    let half = 0.5 * h;
    let k1 = dynamics.eval_values(state, t)?;
    let k2 = dynamics.eval_values(&lincomb_values(&[(state, 1.0), (&k1, half)]), t + half)?;
    let k3 = dynamics.eval_values(&lincomb_values(&[(state, 1.0), (&k2, half)]), t + half)?;
    let k4 = dynamics.eval_values(&lincomb_values(&[(state, 1.0), (&k3, h)]), t + h)?;
    let sixth = h / 6.0;
    Ok(lincomb_values(&[(state, 1.0), (&k1, sixth), (&k2, 2.0 * sixth), (&k3, 2.0 * sixth), (&k4, sixth)]))
}

fn check_times(times: &[f64]) -> Result<()> {
    for (i, &t) in times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidArgument(format!("solve time {t} must be finite and non-negative")));
        }
        if i > 0 && t < times[i - 1] {
            return Err(Error::InvalidArgument(format!("solve times not sorted: {} before {t}", times[i - 1])));
        }
    }
    Ok(())
}

fn ensure_finite(m: &Matrix, time: f64) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { time, context: "embedding state diverged during integration".into() })
    }
}

/// Integrates from `initial` at `t = 0` and returns one snapshot per entry of
/// `times` (sorted ascending), keeping the whole trajectory on the tape.
pub fn solve_to_times<F: VectorField + ?Sized>(
    field: &F,
    tape: &mut Tape,
    initial: Var,
    times: &[f64],
    config: &SolverConfig,
) -> Result<Vec<Var>> {
    check_times(times)?;
    let h = config.step();
    let mut grid_state = initial;
    let mut grid_index = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let target = config.grid_floor(t);
        while grid_index < target {
            let t0 = config.grid_time(grid_index);
            grid_state = rk4_step(field, tape, grid_state, t0, h)?;
            grid_index += 1;
            ensure_finite(tape.value(grid_state), config.grid_time(grid_index))?;
        }
        let t0 = config.grid_time(grid_index);
        let rest = t - t0;
        if rest > 0.0 {
            let branch = rk4_step(field, tape, grid_state, t0, rest)?;
            ensure_finite(tape.value(branch), t)?;
            out.push(branch);
        } else {
            out.push(grid_state);
        }
    }
    Ok(out)
}

/// Same grid and branching as [`solve_to_times`] on plain values, bitwise
/// equal to the tape path and with constant memory. `visit` receives the index
/// into `times` and the state at that time.
pub fn solve_each(
    dynamics: &Dynamics<'_>,
    initial: &Matrix,
    times: &[f64],
    config: &SolverConfig,
    mut visit: impl FnMut(usize, &Matrix) -> Result<()>,
) -> Result<()> {
    check_times(times)?;
    let h = config.step();
    let step = |state: &Matrix, t0: f64, dt: f64| -> Result<Matrix> {
        let v = rk4_step_values(dynamics, state, t0, dt)?;
        ensure_finite(&v, t0 + dt)?;
        Ok(v)
    };
    let mut grid_state = initial.clone();
    let mut grid_index = 0usize;
    for (i, &t) in times.iter().enumerate() {
        let target = config.grid_floor(t);
        while grid_index < target {
            grid_state = step(&grid_state, config.grid_time(grid_index), h)?;
            grid_index += 1;
        }
        let t0 = config.grid_time(grid_index);
        let rest = t - t0;
        if rest > 0.0 {
            let branch = step(&grid_state, t0, rest)?;
            visit(i, &branch)?;
        } else {
            visit(i, &grid_state)?;
        }
    }
    Ok(())
}

/// Plain-valued snapshots at every entry of `times`.
pub fn solve_values(
    dynamics: &Dynamics<'_>,
    initial: &Matrix,
    times: &[f64],
    config: &SolverConfig,
) -> Result<Vec<Matrix>> {
    let mut out = Vec::with_capacity(times.len());
    solve_each(dynamics, initial, times, config, |_, m| {
        out.push(m.clone());
        Ok(())
    })?;
    Ok(out)
}
