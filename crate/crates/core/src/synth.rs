//! Two-mode simulation task with known clustered trajectories.
//!
//! Mode 0 entities follow `c exp(0.5 c t)`, mode 1 entities follow
//! `c + 2 pi c t`. The first half of each mode forms cluster 1, with
//! coefficients near -5; the second half forms cluster 2, near 0.5. An entry
//! `(l0, l1)` reads the mode-0 trajectory of `l0` when `l0 + l1` is even
//! (same parity under 0- and 1-based numbering) and the mode-1 trajectory of
//! `l1` otherwise.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, EntryIndex, Observation};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Entities per mode; the first half is cluster 1.
    pub entities_per_mode: usize,
    pub cluster_means: [f64; 2],
    /// Variance of every coefficient draw.
    pub variance: f64,
    pub time_max: f64,
    pub num_train: usize,
    pub num_test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            entities_per_mode: 20,
            cluster_means: [-5.0, 0.5],
            variance: 0.1,
            time_max: 5.0,
            num_train: 6400,
            num_test: 1600,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.entities_per_mode < 2 || !self.entities_per_mode.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "entities per mode must be even and >= 2, got {}",
                self.entities_per_mode
            )));
        }
        if self.num_train == 0 || self.num_test == 0 {
            return Err(Error::InvalidArgument("train and test counts must be positive".into()));
        }
        if !(self.variance > 0.0) || !(self.time_max > 0.0) {
            return Err(Error::InvalidArgument("variance and time range must be positive".into()));
        }
        Ok(())
    }

    pub fn cluster_size(&self) -> usize {
        self.entities_per_mode / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    /// `coefficients[mode][entity]`
    pub coefficients: [Vec<f64>; 2],
    /// Cluster label (1 or 2) per entity, shared by both modes.
    pub labels: Vec<u8>,
}

pub fn sample_ground_truth(spec: &SynthSpec, rng: &mut Rng) -> GroundTruth {
    let n = spec.entities_per_mode;
    let sd = spec.variance.sqrt();
    let labels: Vec<u8> = (0..n).map(|j| if j < spec.cluster_size() { 1 } else { 2 }).collect();
    let first: Vec<f64> = labels
        .iter()
        .map(|&l| Normal::new(spec.cluster_means[usize::from(l - 1)], sd).expect("positive sd").sample(rng))
        .collect();
    let second: Vec<f64> = first.iter().map(|&c| Normal::new(c, sd).expect("positive sd").sample(rng)).collect();
    GroundTruth { coefficients: [first, second], labels }
}

/// Closed-form trajectory of entity `j` of `mode` (0 or 1).
pub fn trajectory(mode: usize, j: usize, t: f64, truth: &GroundTruth) -> f64 {
    let c = truth.coefficients[mode][j];
    match mode {
        0 => c * (0.5 * c * t).exp(),
        1 => c + 2.0 * PI * c * t,
        _ => panic!("the simulation has two modes, got mode {mode}"),
    }
}

pub fn entry_value(l0: usize, l1: usize, t: f64, truth: &GroundTruth) -> f64 {
    if (l0 + l1).is_multiple_of(2) {
        trajectory(0, l0, t, truth)
    } else {
        trajectory(1, l1, t, truth)
    }
}

fn draw(spec: &SynthSpec, truth: &GroundTruth, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let half = spec.cluster_size();
    let obs = (0..n)
        .map(|_| {
            let base = if rng.random_bool(0.5) { 0 } else { half };
            let l0 = base + rng.random_range(0..half);
            let l1 = base + rng.random_range(0..half);
            let t = rng.random_range(0.0..=spec.time_max);
            Observation { index: EntryIndex(vec![l0, l1]), time: t, value: entry_value(l0, l1, t, truth) }
        })
        .collect();
    Dataset::new(vec![spec.entities_per_mode; 2], obs)
}

/// `(train, test, truth)`, a pure function of `spec`.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, Dataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::SYNTH);
    let truth = sample_ground_truth(spec, &mut rng);
    let train = draw(spec, &truth, spec.num_train, &mut rng)?;
    let test = draw(spec, &truth, spec.num_test, &mut rng)?;
    Ok((train, test, truth))
}

pub fn ground_truth_csv(truth: &GroundTruth) -> String {
    let mut out = String::from("entity,mode,coefficient,cluster\n");
    for mode in 0..2 {
        for (j, c) in truth.coefficients[mode].iter().enumerate() {
            let _ = writeln!(out, "{j},{mode},{c},{}", truth.labels[j]);
        }
    }
    out
}

pub fn write_ground_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    fs::write(path, ground_truth_csv(truth)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth() -> GroundTruth {
        sample_ground_truth(&SynthSpec::default(), &mut rng::stream(0, rng::SYNTH))
    }

    #[test]
    fn cluster_one_coefficients_near_minus_five() {
        let g = truth();
        let bound = 3.0 * 0.1f64.sqrt();
        assert!(g.coefficients[0][..10].iter().all(|c| (c + 5.0).abs() < bound));
        assert!(g.coefficients[0][10..].iter().all(|c| (c - 0.5).abs() < bound));
        assert_eq!(g.labels[..10], [1; 10]);
        assert_eq!(g.labels[10..], [2; 10]);
    }

    #[test]
    fn conditional_coefficients_are_centered() {
        let spec = SynthSpec::default();
        let mut sum = 0.0;
        let mut n = 0.0;
        for seed in 0..400 {
            let g = sample_ground_truth(&spec, &mut rng::stream(seed, rng::SYNTH));
            for (a, b) in g.coefficients[0].iter().zip(&g.coefficients[1]) {
                sum += b - a;
                n += 1.0;
            }
        }
        // Standard error is sqrt(0.1 / 8000), about 0.0035.
        assert!((sum / n).abs() < 0.015);
    }

    #[test]
    fn trajectories_in_closed_form() {
        let g = GroundTruth { coefficients: [vec![-2.0], vec![1.0]], labels: vec![1] };
        assert_eq!(trajectory(0, 0, 0.0, &g), -2.0);
        assert_eq!(trajectory(1, 0, 0.0, &g), 1.0);
        assert!((trajectory(1, 0, 1.0, &g) - (1.0 + 2.0 * PI)).abs() < 1e-15);
        assert!((trajectory(0, 0, 0.5, &g) - -2.0 * (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn parity_selects_the_trajectory() {
        let g = truth();
        // One-based (1, 1) and (1, 2) are zero-based (0, 0) and (0, 1).
        assert_eq!(entry_value(0, 0, 1.3, &g), trajectory(0, 0, 1.3, &g));
        assert_eq!(entry_value(0, 1, 1.3, &g), trajectory(1, 1, 1.3, &g));
        assert_eq!(entry_value(4, 7, 0.0, &g), g.coefficients[1][7]);
    }

    #[test]
    fn generated_sets_follow_the_protocol() {
        let (train, test, _) = generate(&SynthSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (6400, 1600));
        for o in train.observations().iter().chain(test.observations()) {
            let [a, b] = o.index.coords() else { panic!() };
            assert!((*a < 10) == (*b < 10), "cross-cluster entry {a},{b}");
            assert!((0.0..=5.0).contains(&o.time));
        }
    }

    #[test]
    fn generation_is_a_function_of_the_seed() {
        let spec = SynthSpec { num_train: 50, num_test: 10, ..SynthSpec::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn ground_truth_csv_lists_both_modes() {
        let csv = ground_truth_csv(&truth());
        assert_eq!(csv.lines().count(), 41);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0,"));
    }

    proptest! {
        #[test]
        fn value_depends_on_one_index_by_parity(a in 0usize..20, b in 0usize..20, c in 0usize..20, t in 0.0f64..5.0) {
            let g = truth();
            if (a + b) % 2 == 0 && (a + c) % 2 == 0 {
                prop_assert_eq!(entry_value(a, b, t, &g), entry_value(a, c, t, &g));
            }
            if (a + b) % 2 == 1 && (c + b) % 2 == 1 {
                prop_assert_eq!(entry_value(a, b, t, &g), entry_value(c, b, t, &g));
            }
        }
    }
}
