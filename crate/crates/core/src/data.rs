//! Sparse timestamped tensor observations: loading, splitting, scaling and
//! grouping by timestamp.
//!
//! The on-disk format is plain comma-separated text, one observation per
//! line: `i_1,...,i_K,time,value` with 0-based entity indices. A first line
//! that does not parse as numbers is treated as a header; blank lines and
//! lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Entity coordinates of one tensor entry, one per mode.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntryIndex(pub Vec<usize>);

impl EntryIndex {
    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    /// Checks arity and per-mode bounds, naming the offending mode.
    pub fn validate(&self, dims: &[usize]) -> Result<()> {
        if self.0.len() != dims.len() {
            return Err(Error::InvalidArgument(format!(
                "index has {} coordinates, tensor has {} modes",
                self.0.len(),
                dims.len()
            )));
        }
        for (k, (&c, &d)) in self.0.iter().zip(dims).enumerate() {
            if c >= d {
                return Err(Error::IndexOutOfRange(format!("mode {k}: entity {c} but the mode has {d} entities")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub index: EntryIndex,
    pub time: f64,
    pub value: f64,
}

/// An immutable collection of observations of a `K`-mode tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dims: Vec<usize>,
    observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(dims: Vec<usize>, observations: Vec<Observation>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidArgument("tensor order must be at least 1".into()));
        }
        for (n, o) in observations.iter().enumerate() {
            o.index.validate(&dims).map_err(|e| Error::InvalidArgument(format!("observation {n}: {e}")))?;
            if !o.time.is_finite() || o.time < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "observation {n}: time {} must be finite and non-negative",
                    o.time
                )));
            }
            if !o.value.is_finite() {
                return Err(Error::InvalidArgument(format!("observation {n}: non-finite value")));
            }
        }
        Ok(Self { dims, observations })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, n: usize) -> &Observation {
        &self.observations[n]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.value)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.time)
    }

    /// Same observations checked against wider `dims`.
    pub fn with_dims(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.observations)
    }

    fn subset(&self, ids: &[usize]) -> Self {
        Self { dims: self.dims.clone(), observations: ids.iter().map(|&i| self.observations[i].clone()).collect() }
    }

    /// Writes the dataset in the CSV observation format (with a header).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for k in 0..self.order() {
            let _ = write!(out, "i{k},");
        }
        out.push_str("time,value\n");
        for o in &self.observations {
            for c in o.index.coords() {
                let _ = write!(out, "{c},");
            }
            let _ = writeln!(out, "{},{}", o.time, o.value);
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn is_header(fields: &[&str]) -> bool {
    fields.iter().any(|f| f.trim().parse::<f64>().is_err())
}

/// Reads a CSV observation file of a tensor with `order` modes.
///
/// Dims are inferred as the largest coordinate seen per mode plus one.
pub fn load_dataset(path: &Path, order: usize) -> Result<Dataset> {
    load_dataset_with_dims(path, order, None)
}

/// Like [`load_dataset`], with optional explicit mode sizes.
pub fn load_dataset_with_dims(path: &Path, order: usize, dims: Option<&[usize]>) -> Result<Dataset> {
    if order == 0 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let load_err = |line: usize, msg: String| Error::Load { path: path.to_path_buf(), line, msg };
    let ncols = order + 2;
    let mut observations = Vec::new();
    let mut max_coord = vec![0usize; order];

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if observations.is_empty() && line_no == 1 && fields.len() == ncols && is_header(&fields) {
            continue;
        }
        if fields.len() != ncols {
            return Err(load_err(line_no, format!("expected {ncols} columns at line {line_no}")));
        }
        let mut coords = Vec::with_capacity(order);
        for (k, f) in fields[..order].iter().enumerate() {
            let f = f.trim();
            let c: i64 = f.parse().map_err(|_| load_err(line_no, format!("mode {k}: bad index {f:?}")))?;
            if c < 0 {
                return Err(load_err(line_no, format!("mode {k}: negative index {c}")));
            }
            let c = c as usize;
            max_coord[k] = max_coord[k].max(c);
            coords.push(c);
        }
        let parse_real = |what: &str, f: &str| -> Result<f64> {
            let v: f64 = f.trim().parse().map_err(|_| load_err(line_no, format!("bad {what} {f:?}")))?;
            if !v.is_finite() {
                return Err(load_err(line_no, format!("non-finite {what}")));
            }
            Ok(v)
        };
        let time = parse_real("time", fields[order])?;
        if time < 0.0 {
            return Err(load_err(line_no, format!("negative time {time}")));
        }
        let value = parse_real("value", fields[order + 1])?;
        observations.push(Observation { index: EntryIndex(coords), time, value });
    }

    if observations.is_empty() {
        return Err(Error::Empty { path: path.to_path_buf() });
    }
    let dims = match dims {
        Some(d) => {
            if d.len() != order {
                return Err(Error::InvalidArgument(format!("{} dims given for an order-{order} tensor", d.len())));
            }
            d.to_vec()
        }
        None => max_coord.iter().map(|m| m + 1).collect(),
    };
    Dataset::new(dims, observations)
}

/// Number of modes of a CSV observation file: its column count minus two.
pub fn infer_order(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| Error::Empty { path: path.to_path_buf() })?;
    match line.split(',').count() {
        n if n >= 3 => Ok(n - 2),
        n => Err(Error::Load { path: path.to_path_buf(), line: 1, msg: format!("{n} columns, need at least 3") }),
    }
}

/// Reads `index..., time` query rows; an optional header line is skipped.
pub fn load_queries(path: &Path, order: usize) -> Result<Vec<(EntryIndex, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let load_err = |line: usize, msg: String| Error::Load { path: path.to_path_buf(), line, msg };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if line_no == 1 && is_header(&fields) {
            continue;
        }
        if fields.len() != order + 1 {
            return Err(load_err(line_no, format!("expected {} columns", order + 1)));
        }
        let coords = fields[..order]
            .iter()
            .enumerate()
            .map(|(k, f)| f.parse::<usize>().map_err(|_| load_err(line_no, format!("mode {k}: bad index {f:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let t: f64 = fields[order].parse().map_err(|_| load_err(line_no, format!("bad time {:?}", fields[order])))?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(load_err(line_no, format!("time {t} must be finite and non-negative")));
        }
        out.push((EntryIndex(coords), t));
    }
    if out.is_empty() {
        return Err(Error::Empty { path: path.to_path_buf() });
    }
    Ok(out)
}

/// Random train/test partition, deterministic in `seed`.
///
/// Both halves keep the parent's dims and the original relative order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n = dataset.len();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let (train, test) = ids.split_at_mut(n_train.min(n));
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(train), dataset.subset(test)))
}

/// Affine value (and optionally time) scaling fit on training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub value_mean: f64,
    pub value_std: f64,
    pub time_min: f64,
    pub time_max: f64,
    pub time_rescale: bool,
}

impl Standardizer {
    pub fn fit(train: &Dataset, rescale_time: bool) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("cannot fit a standardizer on an empty dataset".into()));
        }
        let n = train.len() as f64;
        let mean = train.values().sum::<f64>() / n;
        let var = train.values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let (tmin, tmax) = train.times().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
        if rescale_time && tmax <= tmin {
            return Err(Error::InvalidArgument(
                "time rescaling needs at least two distinct training timestamps".into(),
            ));
        }
        Ok(Self { value_mean: mean, value_std: std, time_min: tmin, time_max: tmax, time_rescale: rescale_time })
    }

    /// Scaling that leaves values and times untouched.
    pub fn identity() -> Self {
        Self { value_mean: 0.0, value_std: 1.0, time_min: 0.0, time_max: 1.0, time_rescale: false }
    }

    #[inline]
    pub fn value(&self, y: f64) -> f64 {
        (y - self.value_mean) / self.value_std
    }

    #[inline]
    pub fn invert_value(&self, v: f64) -> f64 {
        v * self.value_std + self.value_mean
    }

    /// Model-time of a raw timestamp. Timestamps before the training window
    /// map to the window start.
    #[inline]
    pub fn time(&self, t: f64) -> f64 {
        if self.time_rescale {
            ((t - self.time_min) / (self.time_max - self.time_min)).max(0.0)
        } else {
            t
        }
    }

    /// Raw timestamp of a model time.
    #[inline]
    pub fn invert_time(&self, t: f64) -> f64 {
        if self.time_rescale {
            t * (self.time_max - self.time_min) + self.time_min
        } else {
            t
        }
    }

    pub fn apply(&self, dataset: &Dataset) -> Dataset {
        Dataset {
            dims: dataset.dims.clone(),
            observations: dataset
                .observations
                .iter()
                .map(|o| Observation { index: o.index.clone(), time: self.time(o.time), value: self.value(o.value) })
                .collect(),
        }
    }
}

/// Observations grouped by exact timestamp, in ascending time order.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeIndex {
    unique_times: Vec<f64>,
    buckets: Vec<Vec<usize>>,
}

impl TimeIndex {
    pub fn build(dataset: &Dataset) -> Self {
        let mut ids: Vec<usize> = (0..dataset.len()).collect();
        ids.sort_by(|&a, &b| dataset.get(a).time.total_cmp(&dataset.get(b).time).then(a.cmp(&b)));
        let mut unique_times: Vec<f64> = Vec::new();
        let mut buckets: Vec<Vec<usize>> = Vec::new();
        for id in ids {
            let t = dataset.get(id).time;
            match unique_times.last() {
                Some(&last) if last == t => buckets.last_mut().expect("bucket").push(id),
                _ => {
                    unique_times.push(t);
                    buckets.push(vec![id]);
                }
            }
        }
        Self { unique_times, buckets }
    }

    pub fn unique_times(&self) -> &[f64] {
        &self.unique_times
    }

    pub fn buckets(&self) -> &[Vec<usize>] {
        &self.buckets
    }

    pub fn len(&self) -> usize {
        self.unique_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unique_times.is_empty()
    }
}

/// Convenience: `(train, test)` standardized with statistics fit on `train`.
pub fn standardize_pair(
    train: &Dataset,
    test: &Dataset,
    rescale_time: bool,
) -> Result<(Standardizer, Dataset, Dataset)> {
    let s = Standardizer::fit(train, rescale_time)?;
    let (a, b) = (s.apply(train), s.apply(test));
    Ok((s, a, b))
}
