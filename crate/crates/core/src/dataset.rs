//! Grouped datasets: `m` groups of labeled samples sharing one feature dimension.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("dataset must contain at least one group")]
    NoGroups,
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("feature dimension must be at least 1")]
    ZeroDim,
    #[error("group {group}: feature block has {got} values, expected {expected}")]
    FeatureShape { group: usize, expected: usize, got: usize },
    #[error("group {group}: label {label} is invalid for {kind}")]
    InvalidLabel { group: usize, label: i64, kind: LabelKind },
    #[error("group index {index} out of range for {m} groups")]
    GroupOutOfRange { index: usize, m: usize },
}

/// How labels are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    /// Labels in `{-1, +1}`.
    Binary,
    /// Labels in `0..classes`.
    Multiclass { classes: usize },
}

impl std::fmt::Display for LabelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelKind::Binary => write!(f, "binary"),
            LabelKind::Multiclass { classes } => write!(f, "multiclass:{classes}"),
        }
    }
}

impl std::str::FromStr for LabelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "binary" {
            return Ok(LabelKind::Binary);
        }
        if let Some(c) = s.strip_prefix("multiclass:") {
            let classes: usize = c.parse().map_err(|_| format!("bad class count in {s:?}"))?;
            if classes >= 2 {
                return Ok(LabelKind::Multiclass { classes });
            }
        }
        Err(format!("unknown label kind {s:?} (expected `binary` or `multiclass:<C>`)"))
    }
}

impl LabelKind {
    pub fn accepts(&self, label: i64) -> bool {
        match *self {
            LabelKind::Binary => label == 1 || label == -1,
            LabelKind::Multiclass { classes } => label >= 0 && (label as usize) < classes,
        }
    }
}

/// The samples of one group, features stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    features: Vec<f64>,
    labels: Vec<i64>,
}

impl Group {
    pub fn new(features: Vec<f64>, labels: Vec<i64>) -> Self {
        Self { features, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedDataset {
    dim: usize,
    label_kind: LabelKind,
    groups: Vec<Group>,
}

impl GroupedDataset {
    pub fn new(dim: usize, label_kind: LabelKind, groups: Vec<Group>) -> Result<Self, DatasetError> {
        if dim == 0 {
            return Err(DatasetError::ZeroDim);
        }
        if groups.is_empty() {
            return Err(DatasetError::NoGroups);
        }
        for (i, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(DatasetError::EmptyGroup(i));
            }
            if g.features.len() != g.len() * dim {
                return Err(DatasetError::FeatureShape {
                    group: i,
                    expected: g.len() * dim,
                    got: g.features.len(),
                });
            }
            if let Some(&label) = g.labels.iter().find(|&&l| !label_kind.accepts(l)) {
                return Err(DatasetError::InvalidLabel { group: i, label, kind: label_kind });
            }
        }
        Ok(Self { dim, label_kind, groups })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn label_kind(&self) -> LabelKind {
        self.label_kind
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn group_size(&self, i: usize) -> usize {
        self.groups[i].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Group::len).collect()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    /// Average group size `n_bar = (sum n_i) / m`.
    pub fn n_bar(&self) -> f64 {
        self.total() as f64 / self.m() as f64
    }

    pub fn n_min(&self) -> usize {
        self.groups.iter().map(Group::len).min().unwrap_or(0)
    }

    /// Harmonic mean of the group sizes.
    pub fn n_harmonic(&self) -> f64 {
        let inv: f64 = self.groups.iter().map(|g| 1.0 / g.len() as f64).sum();
        self.m() as f64 / inv
    }

    /// Features of sample `j` in group `i`.
    #[inline]
    pub fn x(&self, i: usize, j: usize) -> &[f64] {
        &self.groups[i].features[j * self.dim..(j + 1) * self.dim]
    }

    #[inline]
    pub fn y(&self, i: usize, j: usize) -> i64 {
        self.groups[i].labels[j]
    }

    /// A one-group dataset holding a copy of group `i`.
    pub fn single_group(&self, i: usize) -> Result<GroupedDataset, DatasetError> {
        let g = self
            .groups
            .get(i)
            .ok_or(DatasetError::GroupOutOfRange { index: i, m: self.m() })?;
        Ok(Self { dim: self.dim, label_kind: self.label_kind, groups: vec![g.clone()] })
    }

    /// Maps a flat index over all samples to `(group, sample)`.
    pub fn flat_to_pair(&self, mut l: usize) -> Option<(usize, usize)> {
        for (i, g) in self.groups.iter().enumerate() {
            if l < g.len() {
                return Some((i, l));
            }
            l -= g.len();
        }
        None
    }

    pub fn pair_to_flat(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.m() || j >= self.groups[i].len() {
            return None;
        }
        Some(self.groups[..i].iter().map(Group::len).sum::<usize>() + j)
    }

    /// Largest Euclidean feature norm over all samples.
    pub fn max_feature_norm(&self) -> f64 {
        self.groups
            .iter()
            .flat_map(|g| g.features.chunks(self.dim))
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}
