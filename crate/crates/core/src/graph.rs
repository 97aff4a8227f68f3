//! K-partite interaction graph and the graph diffusion operator.
//!
//! Entities of all modes are stacked into one vertex list: entity `j` of
//! mode `k` is vertex `offset(k) + j`. Two vertices of different modes are
//! joined when some observed entry contains both. Each undirected edge owns
//! one weight parameter shared by both directions, so the block adjacency
//! is symmetric by construction.
//!
//! The diffusion term is evaluated as an edge-list gather, never as a dense
//! matrix: row `p` of the output is `sum_e w_e (x_q - x_p)` over the edges
//! `e = (p, q)` incident to `p`.

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::ad::{CustomOp, Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{Matrix, Shape};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub mode_a: usize,
    pub entity_a: usize,
    pub mode_b: usize,
    pub entity_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiPartiteGraph {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    /// Sorted by `(mode_a, mode_b, entity_a, entity_b)` with `mode_a < mode_b`.
    edges: Vec<Edge>,
    /// Per vertex: `(neighbor vertex, edge id)`, ordered by edge id.
    adjacency: Vec<Vec<(usize, usize)>>,
}

/// Edge count for one unordered mode pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairStats {
    pub mode_a: usize,
    pub mode_b: usize,
    pub edges: usize,
}

fn offsets_of(dims: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    off.push(0);
    for &d in dims {
        acc += d;
        off.push(acc);
    }
    off
}

impl MultiPartiteGraph {
    /// Builds the graph from every observed entry; duplicates collapse.
    pub fn build(dataset: &Dataset) -> Self {
        let k = dataset.order();
        let mut set = BTreeSet::new();
        for o in dataset.observations() {
            let c = o.index.coords();
            for a in 0..k {
                for b in a + 1..k {
                    set.insert(Edge { mode_a: a, entity_a: c[a], mode_b: b, entity_b: c[b] });
                }
            }
        }
        Self::from_edges(dataset.dims().to_vec(), set.into_iter().collect())
            .expect("edges come from valid observations")
    }

    /// Builds a graph from an explicit edge list (e.g. a checkpoint).
    pub fn from_edges(dims: Vec<usize>, mut edges: Vec<Edge>) -> Result<Self> {
        for e in &mut edges {
            if e.mode_a > e.mode_b {
                *e = Edge { mode_a: e.mode_b, entity_a: e.entity_b, mode_b: e.mode_a, entity_b: e.entity_a };
            }
            if e.mode_a == e.mode_b {
                return Err(Error::InvalidArgument(format!("edge {e:?} joins two vertices of mode {}", e.mode_a)));
            }
            if e.mode_b >= dims.len() || e.entity_a >= dims[e.mode_a] || e.entity_b >= dims[e.mode_b] {
                return Err(Error::IndexOutOfRange(format!("edge {e:?} outside dims {dims:?}")));
            }
        }
        edges.sort_unstable_by_key(|e| (e.mode_a, e.mode_b, e.entity_a, e.entity_b));
        edges.dedup();
        let offsets = offsets_of(&dims);
        let mut adjacency = vec![Vec::new(); offsets[dims.len()]];
        for (id, e) in edges.iter().enumerate() {
            let p = offsets[e.mode_a] + e.entity_a;
            let q = offsets[e.mode_b] + e.entity_b;
            adjacency[p].push((q, id));
            adjacency[q].push((p, id));
        }
        Ok(Self { dims, offsets, edges, adjacency })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Stacked vertex index of entity `j` of mode `k`.
    #[inline]
    pub fn vertex(&self, k: usize, j: usize) -> usize {
        self.offsets[k] + j
    }

    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// `(neighbor, edge id)` pairs incident to a stacked vertex.
    pub fn neighbors(&self, vertex: usize) -> &[(usize, usize)] {
        &self.adjacency[vertex]
    }

    /// Endpoints of an edge as stacked vertex indices.
    pub fn endpoints(&self, edge: usize) -> (usize, usize) {
        let e = &self.edges[edge];
        (self.vertex(e.mode_a, e.entity_a), self.vertex(e.mode_b, e.entity_b))
    }

    pub fn pair_stats(&self) -> Vec<PairStats> {
        let mut out = Vec::new();
        for a in 0..self.order() {
            for b in a + 1..self.order() {
                let edges = self.edges.iter().filter(|e| e.mode_a == a && e.mode_b == b).count();
                out.push(PairStats { mode_a: a, mode_b: b, edges });
            }
        }
        out
    }

    /// Average number of incident edges per vertex, ignoring weights.
    pub fn mean_degree(&self) -> f64 {
        if self.num_vertices() == 0 {
            return 0.0;
        }
        2.0 * self.num_edges() as f64 / self.num_vertices() as f64
    }

    /// Weighted degree of entity `j` of mode `k`, summed over all other modes.
    pub fn degree(&self, weights: &[f64], k: usize, j: usize) -> Result<f64> {
        if k >= self.order() || j >= self.dims[k] {
            return Err(Error::IndexOutOfRange(format!("vertex (mode {k}, entity {j}) with dims {:?}", self.dims)));
        }
        self.check_weights(weights.len())?;
        Ok(self.adjacency[self.vertex(k, j)].iter().map(|&(_, e)| weights[e]).sum())
    }

    fn check_weights(&self, n: usize) -> Result<()> {
        if n != self.num_edges() {
            return Err(Error::shape("edge weights", Shape(n, 1), Shape(self.num_edges(), 1)));
        }
        Ok(())
    }

    fn check_state(&self, state: Shape) -> Result<()> {
        if state.0 != self.num_vertices() {
            return Err(Error::shape("diffusion state", state, Shape(self.num_vertices(), state.1)));
        }
        Ok(())
    }

    /// `(W - A) x` for a stacked `V x R` state.
    pub fn apply_diffusion(&self, weights: &[f64], state: &Matrix) -> Result<Matrix> {
        self.check_weights(weights.len())?;
        self.check_state(state.shape())?;
        Ok(self.laplacian_apply(weights, state))
    }

    fn laplacian_apply(&self, weights: &[f64], x: &Matrix) -> Matrix {
        let r = x.cols();
        let mut out = Matrix::zeros(x.rows(), r);
        let work = 2 * self.num_edges() * r;
        par::rows_mut(out.as_mut_slice(), r, work, |p, orow| {
            let xp = x.row(p);
            for &(q, e) in &self.adjacency[p] {
                let w = weights[e];
                for ((o, &xq), &xpp) in orow.iter_mut().zip(x.row(q)).zip(xp) {
                    *o += w * (xq - xpp);
                }
            }
        });
        out
    }

    /// Records the diffusion term on `tape`, differentiable in both the
    /// edge weights (`E x 1`) and the state (`V x R`).
    pub fn diffuse(self: &Arc<Self>, tape: &mut Tape, weights: Var, state: Var) -> Result<Var> {
        if weights.cols() != 1 {
            return Err(Error::shape("diffuse", weights.shape(), Shape(self.num_edges(), 1)));
        }
        self.check_weights(weights.rows())?;
        self.check_state(state.shape())?;
        let value = self.laplacian_apply(tape.value(weights).as_slice(), tape.value(state));
        Ok(tape.custom(Box::new(DiffusionOp(Arc::clone(self))), &[weights, state], value))
    }
}

/// Initial edge weight: the reciprocal of the mean unweighted degree.
pub fn initial_edge_weight(graph: &MultiPartiteGraph) -> f64 {
    let d = graph.mean_degree();
    if d > 0.0 {
        1.0 / d
    } else {
        0.0
    }
}

struct DiffusionOp(Arc<MultiPartiteGraph>);

impl CustomOp for DiffusionOp {
    fn name(&self) -> &'static str {
        "diffuse"
    }

    fn backward(&self, parents: &[&Matrix], _output: &Matrix, grad: &Matrix, needs: &[bool]) -> Vec<Option<Matrix>> {
        let graph = &self.0;
        let (weights, x) = (parents[0], parents[1]);
        let dw = needs[0].then(|| {
            let r = x.cols();
            let per_edge = par::map_indices(graph.num_edges(), graph.num_edges() * r, |e| {
                let (p, q) = graph.endpoints(e);
                grad.row(p)
                    .iter()
                    .zip(grad.row(q))
                    .zip(x.row(p).iter().zip(x.row(q)))
                    .map(|((gp, gq), (xp, xq))| (gp - gq) * (xq - xp))
                    .sum::<f64>()
            });
            Matrix::column(&per_edge)
        });
        // The operator is symmetric, so its adjoint is itself.
        let dx = needs[1].then(|| graph.laplacian_apply(weights.as_slice(), grad));
        vec![dw, dx]
    }
}

/// Per-mode embedding matrices stacked row-wise into one `V x R` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingState {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    stacked: Matrix,
}

impl EmbeddingState {
    pub fn new(dims: &[usize], stacked: Matrix) -> Result<Self> {
        let offsets = offsets_of(dims);
        if stacked.rows() != offsets[dims.len()] {
            return Err(Error::shape("embedding state", stacked.shape(), Shape(offsets[dims.len()], stacked.cols())));
        }
        Ok(Self { dims: dims.to_vec(), offsets, stacked })
    }

    pub fn from_modes(modes: &[Matrix]) -> Result<Self> {
        let rank = modes.first().map_or(0, Matrix::cols);
        let mut data = Vec::new();
        for m in modes {
            if m.cols() != rank {
                return Err(Error::shape("embedding state", modes[0].shape(), m.shape()));
            }
            data.extend_from_slice(m.as_slice());
        }
        let dims: Vec<usize> = modes.iter().map(Matrix::rows).collect();
        let total = dims.iter().sum();
        Self::new(&dims, Matrix::from_vec(total, rank, data)?)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.stacked.cols()
    }

    pub fn stacked(&self) -> &Matrix {
        &self.stacked
    }

    pub fn into_stacked(self) -> Matrix {
        self.stacked
    }

    /// Embedding of entity `j` of mode `k`.
    pub fn entity(&self, k: usize, j: usize) -> &[f64] {
        self.stacked.row(self.offsets[k] + j)
    }

    /// `d_k x R` matrix of mode `k`.
    pub fn mode(&self, k: usize) -> Matrix {
        let r = self.rank();
        let (a, b) = (self.offsets[k], self.offsets[k + 1]);
        Matrix::from_vec(b - a, r, self.stacked.as_slice()[a * r..b * r].to_vec()).expect("slice shape")
    }
}
