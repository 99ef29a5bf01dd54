//! Synthetic grouped classification data.
//!
//! Every group `i` draws a planted direction `w_i*` uniformly from the unit
//! sphere, features `x ~ N(0, I)`, and labels `sign(<x, w_i*>)` that are kept
//! with some probability and flipped otherwise. The GDRO variant keeps labels
//! with probability 0.9 in every group; the MERO variant uses the
//! heterogeneous schedule `p_i = 0.95 - i / 160` (groups numbered from 0).
//!
//! Randomness comes from ChaCha8 with one stream per `(group, purpose)`, so
//! changing the size of one group never reshuffles another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Group, GroupedDataset, LabelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Gdro,
    Mero,
}

impl std::str::FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gdro" => Ok(SynthKind::Gdro),
            "mero" => Ok(SynthKind::Mero),
            _ => Err(format!("unknown dataset kind {s:?} (expected `gdro` or `mero`)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatagenError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("m = {m} is too large for the noise schedule: group {group} would keep labels with probability {p} <= 0.5")]
    TooManyGroups { m: usize, group: usize, p: f64 },
}

pub const DEFAULT_N_PER_GROUP: usize = 200;
const GDRO_KEEP: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub m: usize,
    pub dim: usize,
    /// Samples per group: either one entry for all groups or one per group.
    pub n_per_group: Vec<usize>,
    pub seed: u64,
    /// Overrides the label-flip probability of every group (GDRO only).
    pub flip_prob: Option<f64>,
    /// Held-out samples per group; `None` means no test set.
    pub test_n: Option<Vec<usize>>,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, m: usize, dim: usize, n: usize, seed: u64) -> Self {
        Self { kind, m, dim, n_per_group: vec![n], seed, flip_prob: None, test_n: None }
    }

    pub fn with_test(mut self) -> Self {
        self.test_n = Some(self.n_per_group.clone());
        self
    }

    fn sizes(&self, n: &[usize]) -> Result<Vec<usize>, DatagenError> {
        let sizes = match n.len() {
            1 => vec![n[0]; self.m],
            len if len == self.m => n.to_vec(),
            len => {
                return Err(DatagenError::InvalidSpec(format!("{len} group sizes given for m = {}", self.m)))
            }
        };
        if sizes.iter().any(|&s| s == 0) {
            return Err(DatagenError::InvalidSpec("every group needs at least one sample".into()));
        }
        Ok(sizes)
    }

    /// Probability that group `i` keeps the clean label.
    pub fn keep_prob(&self, i: usize) -> f64 {
        match (self.kind, self.flip_prob) {
            (SynthKind::Gdro, Some(f)) => 1.0 - f,
            (SynthKind::Gdro, None) => GDRO_KEEP,
            (SynthKind::Mero, _) => mero_keep_prob(i),
        }
    }

    fn validate(&self) -> Result<(), DatagenError> {
        if self.m == 0 || self.dim == 0 {
            return Err(DatagenError::InvalidSpec("m and dim must be at least 1".into()));
        }
        if let Some(f) = self.flip_prob {
            if self.kind == SynthKind::Mero {
                return Err(DatagenError::InvalidSpec("flip_prob only applies to gdro data".into()));
            }
            if !(0.0..=1.0).contains(&f) {
                return Err(DatagenError::InvalidSpec(format!("flip_prob {f} outside [0, 1]")));
            }
        }
        if self.kind == SynthKind::Mero {
            let last = self.m - 1;
            let p = mero_keep_prob(last);
            if p <= 0.5 {
                return Err(DatagenError::TooManyGroups { m: self.m, group: last, p });
            }
        }
        Ok(())
    }
}

/// `0.95 - i / 160`.
pub fn mero_keep_prob(i: usize) -> f64 {
    0.95 - i as f64 / 160.0
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub train: GroupedDataset,
    pub test: Option<GroupedDataset>,
    /// Planted unit directions, one per group.
    pub w_star: Vec<Vec<f64>>,
}

#[derive(Clone, Copy)]
enum Purpose {
    Direction = 0,
    Train = 1,
    Test = 2,
}

fn stream(seed: u64, group: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3 * group as u64 + purpose as u64);
    rng
}

/// Uniform point on the unit sphere via a normalized standard Gaussian.
pub fn unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn draw_group(rng: &mut ChaCha8Rng, w_star: &[f64], n: usize, keep: f64) -> Group {
    let dim = w_star.len();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let s: f64 = features[start..].iter().zip(w_star).map(|(a, b)| a * b).sum();
        let clean = if s >= 0.0 { 1 } else { -1 };
        let kept = rng.random::<f64>() < keep;
        labels.push(if kept { clean } else { -clean });
    }
    Group::new(features, labels)
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic, DatagenError> {
    spec.validate()?;
    let train_sizes = spec.sizes(&spec.n_per_group)?;
    let test_sizes = spec.test_n.as_ref().map(|n| spec.sizes(n)).transpose()?;
    let w_star: Vec<Vec<f64>> =
        (0..spec.m).map(|i| unit_sphere(&mut stream(spec.seed, i, Purpose::Direction), spec.dim)).collect();
    let build = |sizes: &[usize], purpose: Purpose| {
        let groups = (0..spec.m)
            .map(|i| draw_group(&mut stream(spec.seed, i, purpose), &w_star[i], sizes[i], spec.keep_prob(i)))
            .collect();
        GroupedDataset::new(spec.dim, LabelKind::Binary, groups).expect("generated data is well formed")
    };
    let train = build(&train_sizes, Purpose::Train);
    let test = test_sizes.map(|s| build(&s, Purpose::Test));
    Ok(Synthetic { train, test, w_star })
}

/// Equal keep probability 0.9 in every group (or `1 - flip_prob`).
pub fn gen_gdro(spec: &SynthSpec) -> Result<Synthetic, DatagenError> {
    if spec.kind != SynthKind::Gdro {
        return Err(DatagenError::InvalidSpec("gen_gdro needs kind = gdro".into()));
    }
    generate(spec)
}

/// Keep probability `0.95 - i / 160` in group `i`.
pub fn gen_mero(spec: &SynthSpec) -> Result<Synthetic, DatagenError> {
    if spec.kind != SynthKind::Mero {
        return Err(DatagenError::InvalidSpec("gen_mero needs kind = mero".into()));
    }
    generate(spec)
}
