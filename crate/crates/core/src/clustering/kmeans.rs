use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative inertia change below which Lloyd iterations stop.
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            restarts: 50,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance to the nearest chosen centre. Falls back to uniform draws when
/// every point already coincides with a centre.
pub fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..n),
        };
        centroids.push(points[next].clone());
        let c = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

fn inertia_of(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, l)| sq_dist(p, &centroids[*l]))
        .sum()
}

/// Give every empty cluster the point farthest from its own centroid,
/// taken from a cluster that has more than one member.
fn fill_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for l in labels.iter() {
            sizes[*l] += 1;
        }
        let Some(empty) = sizes.iter().position(|s| *s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|i| sizes[labels[*i]] > 1)
            .max_by(|a, b| {
                let da = sq_dist(&points[*a], &centroids[labels[*a]]);
                let db = sq_dist(&points[*b], &centroids[labels[*b]]);
                da.total_cmp(&db).then(b.cmp(a))
            });
        let Some(i) = donor else {
            return;
        };
        labels[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, l) in points.iter().zip(labels) {
        counts[*l] += 1;
        for (s, x) in sums[*l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, opts: &KMeansOptions) -> KMeansResult {
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    fill_empty(points, &mut labels, &mut centroids);
    let mut inertia = inertia_of(points, &labels, &centroids);
    for _ in 0..opts.max_iter {
        update_centroids(points, &labels, &mut centroids);
        let new_labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = new_labels != labels;
        labels = new_labels;
        fill_empty(points, &mut labels, &mut centroids);
        let new_inertia = inertia_of(points, &labels, &centroids);
        let rel = (inertia - new_inertia).abs() / inertia.max(f64::MIN_POSITIVE);
        inertia = new_inertia;
        if !changed || rel < opts.tol {
            break;
        }
    }
    update_centroids(points, &labels, &mut centroids);
    let inertia = inertia_of(points, &labels, &centroids);
    KMeansResult {
        labels,
        centroids,
        inertia,
    }
}

/// Relabel clusters in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<Option<usize>> = Vec::new();
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            if map.len() <= l {
                map.resize(l + 1, None);
            }
            *map[l].get_or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Best-of-`restarts` k-means with k-means++ seeding. Deterministic for a
/// given seed. Requires `1 <= k <= points.len()`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "k = {k} with {} points", points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..opts.restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let run = lloyd(points, init, opts);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let labels = canonical_labels(&best.labels);
    let mut centroids = vec![Vec::new(); k];
    for (old, new) in best.labels.iter().zip(&labels) {
        centroids[*new] = best.centroids[*old].clone();
    }
    KMeansResult {
        labels,
        centroids,
        inertia: best.inertia,
    }
}
