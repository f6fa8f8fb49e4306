//! Affine disturbance-feedback policies: fixed offline policies (averaged or
//! cluster based), policy distances and selection by hour and weather.

mod kmeans;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::optimal_policy;
use crate::error::{Error, Result};
use crate::instance::{weather_features, Instance};
use crate::linalg;

pub use kmeans::{kmeans, nearest, KMeans, DEFAULT_MAX_ITER};

/// Which energy bound a policy or solution belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Up, Direction::Down];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// Gains `M_1..M_N`; the power at step `k` is adjusted by `M_k r~_{k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePolicy {
    #[serde(with = "linalg::rows::vec")]
    pub gains: Vec<DMatrix<f64>>,
    pub anchor_hour: u32,
    pub direction: Direction,
}

impl AffinePolicy {
    pub fn zeros(horizon: usize, np: usize, nr: usize, direction: Direction) -> Self {
        Self {
            gains: vec![DMatrix::zeros(np, nr); horizon],
            anchor_hour: 0,
            direction,
        }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// `M_k` for `k = 1..=N`.
    pub fn gain(&self, k: usize) -> &DMatrix<f64> {
        &self.gains[k - 1]
    }

    /// Checks that every gain is `np x nr` with finite entries.
    pub fn check_shape(&self, horizon: usize, np: usize, nr: usize) -> Result<()> {
        if self.gains.len() != horizon {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} gains, horizon is {horizon}",
                self.gains.len()
            )));
        }
        for (i, m) in self.gains.iter().enumerate() {
            if m.shape() != (np, nr) {
                return Err(Error::ShapeMismatch(format!(
                    "gain {} is {:?}, expected ({np}, {nr})",
                    i + 1,
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("gain {} has non-finite entries", i + 1)));
            }
        }
        Ok(())
    }
}

/// Entry-wise mean of several policies of equal shape.
pub fn average_policies(policies: &[AffinePolicy]) -> Result<AffinePolicy> {
    let first = policies
        .first()
        .ok_or_else(|| Error::invalid("training", "need at least one policy to average"))?;
    let (np, nr) = first.gains.first().map_or((0, 0), |g| g.shape());
    let mut sum = AffinePolicy::zeros(first.horizon(), np, nr, first.direction);
    sum.anchor_hour = first.anchor_hour;
    for p in policies {
        p.check_shape(first.horizon(), np, nr)?;
        for (acc, g) in sum.gains.iter_mut().zip(&p.gains) {
            *acc += g;
        }
    }
    let n = policies.len() as f64;
    for g in &mut sum.gains {
        *g /= n;
    }
    Ok(sum)
}

/// Optimal feedback policies of every training instance, in input order.
///
/// Instances are solved concurrently. The first failing instance (lowest index)
/// is reported.
pub fn optimal_policies(instances: &[Instance], direction: Direction, hour: u32) -> Result<Vec<AffinePolicy>> {
    let results: Vec<Result<AffinePolicy>> = instances
        .par_iter()
        .map(|inst| optimal_policy(&inst.context(), direction))
        .collect();
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map(|mut p| {
                p.anchor_hour = hour;
                p.direction = direction;
                p
            })
            .map_err(|e| Error::Training {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Averaged policy: the entry-wise mean of the optimal policies of the instances.
pub fn train_average_policy(instances: &[Instance], direction: Direction, hour: u32) -> Result<AffinePolicy> {
    if instances.is_empty() {
        return Err(Error::invalid("training", "need at least one training instance"));
    }
    average_policies(&optimal_policies(instances, direction, hour)?)
}

/// Mean and maximum over steps of the Frobenius distance between the gains.
pub fn policy_distance(a: &AffinePolicy, b: &AffinePolicy) -> Result<(f64, f64)> {
    if a.gains.len() != b.gains.len() {
        return Err(Error::ShapeMismatch(format!(
            "policies have {} and {} gains",
            a.gains.len(),
            b.gains.len()
        )));
    }
    if a.gains.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut total = 0.0;
    let mut max = 0.0f64;
    for (k, (ga, gb)) in a.gains.iter().zip(&b.gains).enumerate() {
        if ga.shape() != gb.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gain {} is {:?} vs {:?}",
                k + 1,
                ga.shape(),
                gb.shape()
            )));
        }
        let d = (ga - gb).norm();
        total += d;
        max = max.max(d);
    }
    Ok((total / a.gains.len() as f64, max))
}

/// Feature standardisation fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    /// Zero mean and unit variance per feature; constant features keep unit scale.
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid("features", "need at least one feature vector"))?;
        let dim = first.len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::ShapeMismatch("feature vectors differ in length".into()));
        }
        let n = points.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|i| points.iter().map(|p| p[i]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|i| {
                let var = points.iter().map(|p| (p[i] - mean[i]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 { var.sqrt() } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "feature vector has {} entries, expected {}",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect())
    }
}

/// Policies stored for one hour and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PolicyEntry {
    Average { policy: AffinePolicy },
    Cluster { clusters: Vec<ClusterPolicy> },
}

/// A cluster center (standardised features) and the policy representing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPolicy {
    pub center: Vec<f64>,
    /// Training instance whose optimum represents the cluster.
    pub member: usize,
    pub policy: AffinePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryItem {
    pub hour: u32,
    pub direction: Direction,
    #[serde(flatten)]
    pub entry: PolicyEntry,
}

/// Fixed policies per hour of day and direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLibrary {
    pub version: u32,
    pub samples: usize,
    pub seed: u64,
    /// Standardisation applied to raw weather features before cluster lookup.
    pub scaler: Option<FeatureScaler>,
    pub items: Vec<LibraryItem>,
}

pub const LIBRARY_VERSION: u32 = 1;

impl PolicyLibrary {
    pub fn new(samples: usize, seed: u64, scaler: Option<FeatureScaler>) -> Self {
        Self {
            version: LIBRARY_VERSION,
            samples,
            seed,
            scaler,
            items: Vec::new(),
        }
    }

    /// Inserts or replaces the entry for `(hour, direction)`.
    pub fn insert(&mut self, hour: u32, direction: Direction, entry: PolicyEntry) {
        self.items.retain(|it| !(it.hour == hour && it.direction == direction));
        self.items.push(LibraryItem { hour, direction, entry });
        self.items.sort_by_key(|it| (it.hour, it.direction));
    }

    pub fn get(&self, hour: u32, direction: Direction) -> Option<&PolicyEntry> {
        self.items
            .iter()
            .find(|it| it.hour == hour && it.direction == direction)
            .map(|it| &it.entry)
    }

    pub fn hours(&self) -> Vec<u32> {
        let mut h: Vec<u32> = self.items.iter().map(|it| it.hour).collect();
        h.dedup();
        h
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let lib: Self = serde_json::from_str(text)?;
        if lib.version != LIBRARY_VERSION {
            return Err(Error::invalid(
                "version",
                format!("policy library version {} is not supported", lib.version),
            ));
        }
        Ok(lib)
    }
}

/// Library holding the averaged policies of both directions for one hour.
pub fn train_average_library(instances: &[Instance], hour: u32, seed: u64) -> Result<PolicyLibrary> {
    let mut lib = PolicyLibrary::new(instances.len(), seed, None);
    for dir in Direction::BOTH {
        let policy = train_average_policy(instances, dir, hour)?;
        lib.insert(hour, dir, PolicyEntry::Average { policy });
    }
    Ok(lib)
}

/// Clusters the instances by weather features and stores, per cluster, the
/// optimal policy of the member nearest to its center.
pub fn train_cluster_policies(instances: &[Instance], k: usize, seed: u64, hour: u32) -> Result<PolicyLibrary> {
    let raw: Vec<Vec<f64>> = instances.iter().map(|i| weather_features(&i.weather)).collect();
    let scaler = FeatureScaler::fit(&raw)?;
    let points = raw.iter().map(|p| scaler.transform(p)).collect::<Result<Vec<_>>>()?;
    let km = kmeans(&points, k, seed, DEFAULT_MAX_ITER)?;
    let members: Vec<usize> = km
        .centers
        .iter()
        .enumerate()
        .map(|(c, center)| {
            (0..points.len())
                .filter(|&i| km.assignments[i] == c)
                .min_by(|&i, &j| {
                    kmeans::sq_dist(&points[i], center)
                        .total_cmp(&kmeans::sq_dist(&points[j], center))
                        .then(i.cmp(&j))
                })
                .expect("every cluster has a member")
        })
        .collect();
    let reps: Vec<Instance> = members.iter().map(|&m| instances[m].clone()).collect();
    let mut lib = PolicyLibrary::new(instances.len(), seed, Some(scaler));
    for dir in Direction::BOTH {
        let policies = optimal_policies(&reps, dir, hour).map_err(|e| match e {
            Error::Training { index, source } => Error::Training {
                index: members[index],
                source,
            },
            other => other,
        })?;
        let clusters = km
            .centers
            .iter()
            .zip(&members)
            .zip(policies)
            .map(|((center, &member), policy)| ClusterPolicy {
                center: center.clone(),
                member,
                policy,
            })
            .collect();
        lib.insert(hour, dir, PolicyEntry::Cluster { clusters });
    }
    Ok(lib)
}

/// Policy for `hour` and `direction`; cluster entries pick the nearest center to
/// the standardised `features`, lowest index on ties.
pub fn select_policy<'a>(
    library: &'a PolicyLibrary,
    hour: u32,
    direction: Direction,
    features: &[f64],
) -> Result<&'a AffinePolicy> {
    let entry = library.get(hour, direction).ok_or_else(|| Error::MissingHour {
        hour,
        direction: direction.as_str().into(),
    })?;
    match entry {
        PolicyEntry::Average { policy } => Ok(policy),
        PolicyEntry::Cluster { clusters } => {
            if clusters.is_empty() {
                return Err(Error::MissingHour {
                    hour,
                    direction: direction.as_str().into(),
                });
            }
            let x = match &library.scaler {
                Some(s) => s.transform(features)?,
                None => features.to_vec(),
            };
            let centers: Vec<Vec<f64>> = clusters.iter().map(|c| c.center.clone()).collect();
            if centers.iter().any(|c| c.len() != x.len()) {
                return Err(Error::ShapeMismatch("feature vector does not match the cluster centers".into()));
            }
            Ok(&clusters[nearest(&centers, &x)].policy)
        }
    }
}
