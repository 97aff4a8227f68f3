//! Plain-text model checkpoints.
//!
//! ```text
//! difftensor-checkpoint 1
//! dims 20 20
//! rank 1
//! ...
//! edges 3
//! 0 0 1 4
//! ...
//! array edge_weights 3 1
//! 0.25 0.25 0.25
//! ```
//!
//! Header lines are `key value...`. An `edges n` line is followed by `n`
//! edge lines; an `array name rows cols` line is followed by one line of
//! row-major values. Floats are written in shortest round-trip form, so a
//! save/load cycle is exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::graph::{Edge, MultiPartiteGraph};
use crate::matrix::Matrix;
use crate::model::{Model, ModelParams, ModelSpec};
use crate::nn::{Layer, Mlp};
use crate::ode::{SolverConfig, Terms};

const MAGIC: &str = "difftensor-checkpoint";
const VERSION: &str = "1";

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn write_array(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "array {name} {} {}", m.rows(), m.cols());
    let _ = writeln!(out, "{}", join(m.as_slice()));
}

fn write_mlp(out: &mut String, prefix: &str, mlp: &Mlp) {
    for (i, l) in mlp.layers().iter().enumerate() {
        write_array(out, &format!("{prefix}.layer{i}.weight"), &l.weight);
        write_array(out, &format!("{prefix}.layer{i}.bias"), &l.bias);
    }
}

pub fn to_text(model: &Model) -> String {
    let mut out = String::new();
    let s = &model.standardizer;
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "dims {}", join(model.dims()));
    let _ = writeln!(out, "rank {}", model.spec.rank);
    let _ = writeln!(out, "reaction_hidden {}", join(&model.spec.reaction_hidden));
    let _ = writeln!(out, "readout_hidden {}", join(&model.spec.readout_hidden));
    let _ = writeln!(out, "terms {}", model.spec.terms.name());
    let _ = writeln!(out, "substeps_per_unit {}", model.spec.solver.substeps_per_unit);
    let _ = writeln!(out, "value_mean {}", s.value_mean);
    let _ = writeln!(out, "value_std {}", s.value_std);
    let _ = writeln!(out, "time_min {}", s.time_min);
    let _ = writeln!(out, "time_max {}", s.time_max);
    let _ = writeln!(out, "time_rescale {}", s.time_rescale);
    let _ = writeln!(out, "edges {}", model.graph.num_edges());
    for e in model.graph.edges() {
        let _ = writeln!(out, "{} {} {} {}", e.mode_a, e.entity_a, e.mode_b, e.entity_b);
    }
    let p = &model.params;
    for (k, m) in p.initial_state.iter().enumerate() {
        write_array(&mut out, &format!("initial_state.{k}"), m);
    }
    write_array(&mut out, "edge_weights", &p.edge_weights);
    for (k, m) in p.reaction.iter().enumerate() {
        write_mlp(&mut out, &format!("reaction.{k}"), m);
    }
    write_mlp(&mut out, "readout", &p.readout);
    write_array(&mut out, "log_noise_variance", &p.log_noise_variance);
    out
}

/// Writes `model` to `path` through a sibling temporary file and a rename.
pub fn save(model: &Model, path: &Path) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, to_text(model)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Parsed {
    fields: HashMap<String, Vec<String>>,
    edges: Vec<Edge>,
    arrays: HashMap<String, Matrix>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn parse_tokens<T: FromStr>(tokens: &[&str], line: usize) -> Result<Vec<T>> {
    tokens.iter().map(|t| t.parse().map_err(|_| bad(format!("line {line}: cannot parse {t:?}")))).collect()
}

fn parse(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.split_whitespace().collect::<Vec<_>>() == [MAGIC, VERSION] => {}
        _ => return Err(bad(format!("missing \"{MAGIC} {VERSION}\" header"))),
    }
    let mut p = Parsed { fields: HashMap::new(), edges: Vec::new(), arrays: HashMap::new() };
    while let Some((n, line)) = lines.next() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, rest)) = tokens.split_first() else { continue };
        match key {
            "edges" => {
                let [count] = parse_tokens::<usize>(rest, n)?[..] else {
                    return Err(bad(format!("line {n}: edges takes one count")));
                };
                for _ in 0..count {
                    let (m, l) = lines.next().ok_or_else(|| bad("truncated edge list"))?;
                    let v: Vec<usize> = parse_tokens(&l.split_whitespace().collect::<Vec<_>>(), m)?;
                    let [mode_a, entity_a, mode_b, entity_b] = v[..] else {
                        return Err(bad(format!("line {m}: edge needs 4 fields")));
                    };
                    p.edges.push(Edge { mode_a, entity_a, mode_b, entity_b });
                }
            }
            "array" => {
                let [name, r, c] = rest[..] else {
                    return Err(bad(format!("line {n}: array needs name, rows and cols")));
                };
                let dims: Vec<usize> = parse_tokens(&[r, c], n)?;
                let (m, l) = lines.next().ok_or_else(|| bad(format!("array {name} has no values")))?;
                let values: Vec<f64> = parse_tokens(&l.split_whitespace().collect::<Vec<_>>(), m)?;
                let mat = Matrix::from_vec(dims[0], dims[1], values)
                    .map_err(|_| bad(format!("line {m}: array {name} has the wrong number of values")))?;
                p.arrays.insert(name.to_string(), mat);
            }
            _ => {
                p.fields.insert(key.to_string(), rest.iter().map(|s| s.to_string()).collect());
            }
        }
    }
    Ok(p)
}

impl Parsed {
    fn field(&self, key: &str) -> Result<&[String]> {
        self.fields.get(key).map(Vec::as_slice).ok_or_else(|| bad(format!("missing field {key}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.field(key)?
            .iter()
            .map(|s| s.parse().map_err(|_| bad(format!("field {key}: cannot parse {s:?}"))))
            .collect()
    }

    fn one<T: FromStr>(&self, key: &str) -> Result<T> {
        let mut v = self.list::<T>(key)?;
        match v.len() {
            1 => Ok(v.remove(0)),
            _ => Err(bad(format!("field {key} takes one value"))),
        }
    }

    fn array(&mut self, name: &str) -> Result<Matrix> {
        self.arrays.remove(name).ok_or_else(|| bad(format!("missing array {name}")))
    }

    fn mlp(&mut self, prefix: &str, config: crate::nn::MlpConfig) -> Result<Mlp> {
        let n = config.layer_dims().len();
        let layers = (0..n)
            .map(|i| {
                Ok(Layer {
                    weight: self.array(&format!("{prefix}.layer{i}.weight"))?,
                    bias: self.array(&format!("{prefix}.layer{i}.bias"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(config, layers).map_err(|e| bad(format!("{prefix}: {e}")))
    }
}

pub fn from_text(text: &str) -> Result<Model> {
    let mut p = parse(text)?;
    let dims: Vec<usize> = p.list("dims")?;
    let spec = ModelSpec {
        rank: p.one("rank")?,
        reaction_hidden: p.list("reaction_hidden")?,
        readout_hidden: p.list("readout_hidden")?,
        terms: Terms::parse(&p.one::<String>("terms")?)?,
        solver: SolverConfig::new(p.one("substeps_per_unit")?)?,
    };
    let standardizer = Standardizer {
        value_mean: p.one("value_mean")?,
        value_std: p.one("value_std")?,
        time_min: p.one("time_min")?,
        time_max: p.one("time_max")?,
        time_rescale: p.one("time_rescale")?,
    };
    let graph = Arc::new(MultiPartiteGraph::from_edges(dims.clone(), std::mem::take(&mut p.edges))?);
    let initial_state = (0..dims.len()).map(|k| p.array(&format!("initial_state.{k}"))).collect::<Result<Vec<_>>>()?;
    for (k, m) in initial_state.iter().enumerate() {
        if m.rows() != dims[k] || m.cols() != spec.rank {
            return Err(bad(format!("initial_state.{k} is {} but expected {}x{}", m.shape(), dims[k], spec.rank)));
        }
    }
    let edge_weights = p.array("edge_weights")?;
    if edge_weights.rows() != graph.num_edges() || edge_weights.cols() != 1 {
        return Err(bad(format!("edge_weights is {} for {} edges", edge_weights.shape(), graph.num_edges())));
    }
    let rc = spec.reaction_config()?;
    let reaction = (0..dims.len()).map(|k| p.mlp(&format!("reaction.{k}"), rc.clone())).collect::<Result<Vec<_>>>()?;
    let readout = p.mlp("readout", spec.readout_config(dims.len())?)?;
    let log_noise_variance = p.array("log_noise_variance")?;
    if log_noise_variance.len() != 1 {
        return Err(bad("log_noise_variance must be 1x1"));
    }
    let params = ModelParams { initial_state, edge_weights, reaction, readout, log_noise_variance };
    Ok(Model { graph, spec, params, standardizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, EntryIndex, Observation};

    fn model() -> Model {
        let obs = [[0, 1], [2, 0], [1, 1]]
            .iter()
            .map(|i| Observation { index: EntryIndex(i.to_vec()), time: 0.5, value: 1.0 })
            .collect();
        let ds = Dataset::new(vec![3, 2], obs).unwrap();
        let graph = Arc::new(MultiPartiteGraph::build(&ds));
        let spec = ModelSpec { rank: 2, reaction_hidden: vec![], readout_hidden: vec![3, 2], ..ModelSpec::default() };
        let std = Standardizer { value_mean: 0.1, value_std: 3.0, time_min: 0.0, time_max: 7.0, time_rescale: true };
        Model::init(graph, spec, std, 17).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let m = model();
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
        assert!(!dir.path().join(".model.ckpt.tmp").exists());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(from_text("").is_err());
        let text = to_text(&model());
        let truncated: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(from_text(&truncated).is_err());
        let wrong = text.replace("rank 2", "rank 3");
        assert!(from_text(&wrong).is_err());
    }
}
