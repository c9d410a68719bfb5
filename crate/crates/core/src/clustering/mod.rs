//! Spectral clustering of the association graph.
//!
//! The association matrix is used directly as a weighted adjacency matrix.
//! Appliances are embedded with the eigenvectors of the symmetric normalized
//! Laplacian `L = I - D^{-1/2} Q D^{-1/2}` for the `k` smallest eigenvalues,
//! rows are scaled to unit length, and the rows are grouped with k-means.
//! The cluster count is chosen by mean silhouette in the embedding space.

mod kmeans;
mod metrics;

pub use kmeans::{canonical_labels, kmeans, plus_plus_init, KMeansOptions, KMeansResult};
pub use metrics::{adjusted_rand_index, silhouette};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::association::AssociationMatrix;
use crate::data::{ApplianceSeries, HouseholdDataset};
use crate::error::{Error, Result};
use crate::events::ExclusionReport;

/// Symmetric normalized Laplacian. Rows and columns of isolated nodes are
/// identity rows.
pub fn laplacian(q: &[Vec<f64>]) -> DMatrix<f64> {
    let n = q.len();
    let inv_sqrt: Vec<f64> = q
        .iter()
        .map(|row| {
            let d: f64 = row.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let off = q[i][j] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    })
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending (ties by
/// original index). Columns of the returned matrix are the eigenvectors.
pub fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]).then(a.cmp(b)));
    let values = order.iter().map(|i| eig.eigenvalues[*i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Row-normalized spectral embedding (one row per node, `k` columns) plus
/// the full ascending Laplacian spectrum.
pub fn spectral_embedding(q: &[Vec<f64>], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (values, vectors) = sorted_eigen(laplacian(q));
    let rows = (0..q.len())
        .map(|r| {
            let row: Vec<f64> = (0..k).map(|c| vectors[(r, c)]).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                row.into_iter().map(|x| x / norm).collect()
            } else {
                vec![0.0; k]
            }
        })
        .collect();
    (rows, values)
}

fn check_matrix(q: &AssociationMatrix) -> Result<()> {
    let n = q.len();
    for i in 0..n {
        for j in 0..n {
            let v = q.q[i][j];
            if !v.is_finite() || v < 0.0 || v != q.q[j][i] || (i == j && v != 0.0) {
                return Err(Error::Data(format!(
                    "association matrix must be symmetric, non-negative, zero-diagonal (entry {i},{j} = {v})"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRun {
    pub labels: Vec<usize>,
    pub embedding: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub inertia: f64,
}

pub fn spectral_run(q: &AssociationMatrix, k: usize, seed: u64, opts: &KMeansOptions) -> Result<SpectralRun> {
    check_matrix(q)?;
    let n = q.len();
    if k < 2 || k > n {
        return Err(Error::OutOfRange {
            name: "cluster count k",
            value: k.to_string(),
            range: format!("[2, {n}]"),
        });
    }
    let (embedding, eigenvalues) = spectral_embedding(&q.q, k);
    let km = kmeans(&embedding, k, seed, opts);
    Ok(SpectralRun {
        labels: km.labels,
        embedding,
        eigenvalues,
        inertia: km.inertia,
    })
}

/// Spectral clustering into `k` groups; labels in order of first appearance.
pub fn spectral_cluster(q: &AssociationMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(spectral_run(q, k, seed, &KMeansOptions::default())?.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowRow {
    pub k: usize,
    pub inertia: f64,
    /// `lambda_{k+1} - lambda_k` (1-based eigenvalue order).
    pub eigengap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub silhouette_by_k: BTreeMap<usize, f64>,
    pub eigenvalues: Vec<f64>,
    pub elbow: Vec<ElbowRow>,
    pub seed: u64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<String> {
        self.ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, l)| **l == cluster)
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn label_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id).map(|i| self.labels[i])
    }
}

fn eigengap(values: &[f64], k: usize) -> f64 {
    match (values.get(k - 1), values.get(k)) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    }
}

fn all_zero(q: &AssociationMatrix) -> bool {
    q.q.iter().flatten().all(|v| *v == 0.0)
}

fn singleton_assignment(q: &AssociationMatrix, seed: u64, warning: String) -> ClusterAssignment {
    log::warn!("{warning}");
    let n = q.len();
    ClusterAssignment {
        k: n,
        ids: q.ids.clone(),
        labels: (0..n).collect(),
        silhouette_by_k: BTreeMap::new(),
        eigenvalues: vec![1.0; n],
        elbow: Vec::new(),
        seed,
        warnings: vec![warning],
    }
}

/// Cluster with every `k` in `[2, n - 1]` and keep the one with the highest
/// mean silhouette (ties go to the smaller `k`). Inertia and eigengaps are
/// recorded for an elbow diagnostic only.
pub fn select_k(q: &AssociationMatrix, seed: u64) -> Result<ClusterAssignment> {
    select_k_with(q, seed, &KMeansOptions::default())
}

pub fn select_k_with(q: &AssociationMatrix, seed: u64, opts: &KMeansOptions) -> Result<ClusterAssignment> {
    check_matrix(q)?;
    let n = q.len();
    if n < 3 {
        return Err(Error::OutOfRange {
            name: "appliance count for k selection",
            value: n.to_string(),
            range: ">= 3".into(),
        });
    }
    if all_zero(q) {
        return Ok(singleton_assignment(
            q,
            seed,
            "association matrix is all zero; every appliance is its own cluster".into(),
        ));
    }
    let mut silhouette_by_k = BTreeMap::new();
    let mut elbow = Vec::new();
    let mut best: Option<(f64, SpectralRun)> = None;
    for k in 2..n {
        let run = spectral_run(q, k, seed, opts)?;
        let s = silhouette(&run.embedding, &run.labels);
        silhouette_by_k.insert(k, s);
        elbow.push(ElbowRow {
            k,
            inertia: run.inertia,
            eigengap: eigengap(&run.eigenvalues, k),
        });
        if best.as_ref().is_none_or(|(b, _)| s > *b + 1e-12) {
            best = Some((s, run));
        }
    }
    let (_, run) = best.expect("k range is non-empty");
    let k = run.labels.iter().max().map_or(0, |m| m + 1);
    Ok(ClusterAssignment {
        k,
        ids: q.ids.clone(),
        labels: run.labels,
        silhouette_by_k,
        eigenvalues: run.eigenvalues,
        elbow,
        seed,
        warnings: Vec::new(),
    })
}

/// Clustering with a fixed `k` (silhouette recorded for that `k` only).
pub fn fixed_k(q: &AssociationMatrix, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let run = spectral_run(q, k, seed, &KMeansOptions::default())?;
    let s = silhouette(&run.embedding, &run.labels);
    Ok(ClusterAssignment {
        k,
        ids: q.ids.clone(),
        silhouette_by_k: BTreeMap::from([(k, s)]),
        elbow: vec![ElbowRow {
            k,
            inertia: run.inertia,
            eigengap: eigengap(&run.eigenvalues, k),
        }],
        labels: run.labels,
        eigenvalues: run.eigenvalues,
        seed,
        warnings: Vec::new(),
    })
}

/// Which cluster receives the appliances excluded from association mining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttachRule {
    /// Zero-based cluster index.
    Index(usize),
    /// The cluster with the fewest retained members (lowest index on ties).
    #[default]
    Smallest,
}

impl fmt::Display for AttachRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttachRule::Index(i) => write!(f, "{i}"),
            AttachRule::Smallest => f.write_str("smallest"),
        }
    }
}

impl FromStr for AttachRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smallest" => Ok(AttachRule::Smallest),
            other => other
                .parse()
                .map(AttachRule::Index)
                .map_err(|_| Error::Config(format!("attach rule must be an index or `smallest`, got {other:?}"))),
        }
    }
}

impl Serialize for AttachRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AttachRule::Index(i) => s.serialize_u64(*i as u64),
            AttachRule::Smallest => s.serialize_str("smallest"),
        }
    }
}

impl<'de> Deserialize<'de> for AttachRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(AttachRule::Index(i)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl AttachRule {
    pub fn resolve(&self, assignment: &ClusterAssignment) -> Result<usize> {
        match *self {
            AttachRule::Index(i) if i < assignment.k => Ok(i),
            AttachRule::Index(i) => Err(Error::OutOfRange {
                name: "attach cluster index",
                value: i.to_string(),
                range: format!("[0, {})", assignment.k),
            }),
            AttachRule::Smallest => Ok((0..assignment.k)
                .min_by_key(|c| (assignment.labels.iter().filter(|l| **l == *c).count(), *c))
                .unwrap_or(0)),
        }
    }
}

/// One cluster's members (retained plus attached) and summed load.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLoad {
    pub index: usize,
    pub members: Vec<String>,
    pub series: ApplianceSeries,
}

/// Member lists per cluster with excluded appliances attached.
pub fn cluster_members(
    assignment: &ClusterAssignment,
    excluded: &ExclusionReport,
    attach: AttachRule,
) -> Result<Vec<Vec<String>>> {
    let mut members: Vec<Vec<String>> = (0..assignment.k).map(|c| assignment.members(c)).collect();
    if !excluded.excluded.is_empty() {
        let target = attach.resolve(assignment)?;
        members[target].extend(excluded.excluded.iter().cloned());
    }
    Ok(members)
}

/// Elementwise sum of member loads per cluster. Excluded low-power
/// appliances are all attached to one cluster first, so the cluster loads
/// add up to the sum over all appliances.
pub fn aggregate_cluster_loads(
    dataset: &HouseholdDataset,
    assignment: &ClusterAssignment,
    excluded: &ExclusionReport,
    attach: AttachRule,
) -> Result<Vec<ClusterLoad>> {
    let members = cluster_members(assignment, excluded, attach)?;
    let grid = dataset.grid();
    members
        .into_iter()
        .enumerate()
        .map(|(index, members)| {
            let mut power = vec![0.0; grid.count];
            for id in &members {
                let a = dataset
                    .appliance(id)
                    .ok_or_else(|| Error::Data(format!("cluster member {id} is not in the dataset")))?;
                for (s, p) in power.iter_mut().zip(&a.power) {
                    *s += p;
                }
            }
            let series = ApplianceSeries::new(format!("cluster-{index}"), members.join("+"), power, grid)?;
            Ok(ClusterLoad {
                index,
                members,
                series,
            })
        })
        .collect()
}

/// On-disk form: labels keyed by channel code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFile {
    pub k: usize,
    pub ids: Vec<String>,
    pub labels: BTreeMap<String, usize>,
    pub silhouette: BTreeMap<usize, f64>,
    pub eigenvalues: Vec<f64>,
    pub elbow: Vec<ElbowRow>,
    pub seed: u64,
    pub attach_excluded: AttachRule,
    /// Low-power appliances left out of mining, attached per `attach_excluded`.
    #[serde(default)]
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

impl ClusterFile {
    pub fn new(a: &ClusterAssignment, attach: AttachRule) -> Self {
        ClusterFile {
            k: a.k,
            ids: a.ids.clone(),
            labels: a.ids.iter().cloned().zip(a.labels.iter().copied()).collect(),
            silhouette: a.silhouette_by_k.clone(),
            eigenvalues: a.eigenvalues.clone(),
            elbow: a.elbow.clone(),
            seed: a.seed,
            attach_excluded: attach,
            excluded: Vec::new(),
            warnings: a.warnings.clone(),
        }
    }

    /// Members of every cluster, excluded appliances included.
    pub fn members(&self) -> Result<Vec<Vec<String>>> {
        let a = self.assignment()?;
        let mut members: Vec<Vec<String>> = (0..a.k).map(|c| a.members(c)).collect();
        if !self.excluded.is_empty() {
            let target = self.attach_excluded.resolve(&a)?;
            members[target].extend(self.excluded.iter().cloned());
        }
        Ok(members)
    }

    pub fn assignment(&self) -> Result<ClusterAssignment> {
        let labels = self
            .ids
            .iter()
            .map(|id| {
                self.labels
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Data(format!("no label for {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.iter().any(|l| *l >= self.k) {
            return Err(Error::Data("cluster label out of range".into()));
        }
        Ok(ClusterAssignment {
            k: self.k,
            ids: self.ids.clone(),
            labels,
            silhouette_by_k: self.silhouette.clone(),
            eigenvalues: self.eigenvalues.clone(),
            elbow: self.elbow.clone(),
            seed: self.seed,
            warnings: self.warnings.clone(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{TimeGrid, WeatherSeries};

    fn matrix(q: Vec<Vec<f64>>) -> AssociationMatrix {
        let ids = (0..q.len()).map(|i| format!("A{i}")).collect();
        AssociationMatrix::from_values(ids, q).unwrap()
    }

    fn block(sizes: &[usize], within: f64, across: f64) -> (AssociationMatrix, Vec<usize>) {
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, s)| vec![b; *s]).collect();
        let n = labels.len();
        let q = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match (i == j, labels[i] == labels[j]) {
                        (true, _) => 0.0,
                        (false, true) => within,
                        (false, false) => across,
                    })
                    .collect()
            })
            .collect();
        (matrix(q), labels)
    }

    #[test]
    fn two_node_laplacian() {
        let l = laplacian(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn isolated_nodes_are_identity() {
        let l = laplacian(&vec![vec![0.0; 3]; 3]);
        assert_eq!(l, DMatrix::identity(3, 3));
    }

    #[test]
    fn perfect_two_blocks() {
        let (q, truth) = block(&[3, 4], 1.0, 0.0);
        let labels = spectral_cluster(&q, 2, 7).unwrap();
        assert_eq!(adjusted_rand_index(&labels, &truth), 1.0);
        let a = select_k(&q, 7).unwrap();
        assert_eq!(a.k, 2);
        assert!((a.silhouette_by_k[&2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_eigenvalues_count_components() {
        let (q, _) = block(&[2, 3, 2], 0.7, 0.0);
        let (values, _) = sorted_eigen(laplacian(&q.q));
        assert_eq!(values.iter().filter(|v| v.abs() < 1e-10).count(), 3);
        assert!(values.iter().all(|v| *v > -1e-10 && *v < 2.0 + 1e-10));
    }

    #[test]
    fn all_zero_matrix_gives_singletons() {
        let q = matrix(vec![vec![0.0; 4]; 4]);
        let a = select_k(&q, 1).unwrap();
        assert_eq!(a.k, 4);
        assert_eq!(a.labels, vec![0, 1, 2, 3]);
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn weakly_tied_appliance_is_a_singleton() {
        let (mut q, _) = block(&[3, 3], 0.9, 0.02);
        let n = q.len();
        q.ids.push("loner".into());
        for (i, row) in q.q.iter_mut().enumerate() {
            row.push(0.01 + 0.001 * i as f64);
        }
        let last: Vec<f64> = (0..=n).map(|j| if j == n { 0.0 } else { q.q[j][n] }).collect();
        q.q.push(last);
        q.counts = vec![vec![Default::default(); n + 1]; n + 1];
        let a = select_k(&q, 3).unwrap();
        assert_eq!(a.k, 3, "silhouettes: {:?}", a.silhouette_by_k);
        let loner = a.labels[n];
        assert_eq!(a.labels.iter().filter(|l| **l == loner).count(), 1);
    }

    #[test]
    fn k_out_of_range() {
        let (q, _) = block(&[2, 2], 1.0, 0.0);
        assert!(spectral_cluster(&q, 1, 0).is_err());
        assert!(spectral_cluster(&q, 5, 0).is_err());
        let (small, _) = block(&[1, 1], 1.0, 0.0);
        assert!(select_k(&small, 0).is_err());
    }

    #[test]
    fn rejects_asymmetric_input() {
        let q = matrix(vec![vec![0.0, 0.5, 0.0], vec![0.4, 0.0, 0.0], vec![0.0, 0.0, 0.0]]);
        assert!(spectral_cluster(&q, 2, 0).is_err());
    }

    fn dataset(ids: &[&str]) -> HouseholdDataset {
        let grid = TimeGrid::new(0, 7200, 12).unwrap();
        let appliances = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ApplianceSeries::new(*id, *id, (0..12).map(|s| (s + i) as f64).collect(), grid).unwrap())
            .collect();
        let total = ApplianceSeries::new("T", "T", vec![0.0; 12], grid).unwrap();
        HouseholdDataset::new(appliances, total, WeatherSeries::zeros(grid), &[], 0).unwrap()
    }

    fn assignment(ids: &[&str], labels: Vec<usize>) -> ClusterAssignment {
        ClusterAssignment {
            k: labels.iter().max().unwrap() + 1,
            ids: ids.iter().map(|s| s.to_string()).collect(),
            labels,
            silhouette_by_k: BTreeMap::new(),
            eigenvalues: vec![],
            elbow: vec![],
            seed: 0,
            warnings: vec![],
        }
    }

    fn exclusion(ids: &[&str]) -> ExclusionReport {
        ExclusionReport {
            excluded: ids.iter().map(|s| s.to_string()).collect(),
            rule_threshold: 50.0,
            peak_quantile: 0.99,
            retained_count: 0,
            peaks: BTreeMap::new(),
        }
    }

    #[test]
    fn sums_members_and_attaches_excluded() {
        let ds = dataset(&["a", "b", "c", "low"]);
        let asg = assignment(&["a", "b", "c"], vec![0, 0, 1]);
        let loads = aggregate_cluster_loads(&ds, &asg, &exclusion(&["low"]), AttachRule::Index(1)).unwrap();
        assert_eq!(loads[0].members, vec!["a", "b"]);
        assert_eq!(loads[1].members, vec!["c", "low"]);
        assert_eq!(loads[0].series.power[0], 1.0);
        assert_eq!(loads[1].series.power[0], 2.0 + 3.0);
        let smallest = aggregate_cluster_loads(&ds, &asg, &exclusion(&["low"]), AttachRule::Smallest).unwrap();
        assert_eq!(smallest[1].members, vec!["c", "low"]);
        assert!(aggregate_cluster_loads(&ds, &asg, &exclusion(&["low"]), AttachRule::Index(2)).is_err());
    }

    #[test]
    fn attach_rule_parsing() {
        assert_eq!("3".parse::<AttachRule>().unwrap(), AttachRule::Index(3));
        assert_eq!("smallest".parse::<AttachRule>().unwrap(), AttachRule::Smallest);
        assert!("biggest".parse::<AttachRule>().is_err());
        let json = serde_json::to_string(&[AttachRule::Index(2), AttachRule::Smallest]).unwrap();
        assert_eq!(json, r#"[2,"smallest"]"#);
        let back: Vec<AttachRule> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, vec![AttachRule::Index(2), AttachRule::Smallest]);
    }
}
