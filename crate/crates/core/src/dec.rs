//! Deep embedded clustering: k-means initialisation, Student-t soft
//! assignment, sharpened target distribution and KL refinement of the
//! encoder together with the centroids.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neural::{DenseStack, Sgd};
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecConfig {
    pub k: usize,
    /// Upper bound on refinement epochs.
    pub max_iterations: usize,
    /// Epochs between recomputations of the target distribution.
    pub target_update_interval: usize,
    /// Stop once fewer than this fraction of labels change between target updates.
    pub stop_tolerance: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for DecConfig {
    fn default() -> Self {
        DecConfig {
            k: 5,
            max_iterations: 100,
            target_update_interval: 1,
            stop_tolerance: 0.001,
            alpha: 1.0,
            learning_rate: 0.01,
            batch_size: 256,
            kmeans_restarts: 10,
            seed: 0,
        }
    }
}

impl DecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!("cluster count must be at least 2, got {}", self.k)));
        }
        if !(0.0..1.0).contains(&self.stop_tolerance) && self.stop_tolerance != 1.0 {
            return Err(Error::invalid(format!(
                "stop tolerance must lie in [0, 1], got {}",
                self.stop_tolerance
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.target_update_interval == 0 || self.kmeans_restarts == 0 {
            return Err(Error::invalid(
                "batch size, target update interval and k-means restarts must be positive",
            ));
        }
        Ok(())
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

fn kmeans_plus_plus<R: Rng + ?Sized>(data: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let m = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    centroids.row_mut(0).assign(&data.row(rng.random_range(0..m)));
    let mut d2: Vec<f64> = data.outer_iter().map(|r| sq_dist(r, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, r) in data.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centroids.row(c)));
        }
    }
    centroids
}

fn lloyd(data: ArrayView2<f64>, mut centroids: Array2<f64>, max_iter: usize) -> KMeansResult {
    let (m, d) = data.dim();
    let k = centroids.nrows();
    let mut labels = vec![usize::MAX; m];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, r) in data.outer_iter().enumerate() {
            let (j, _) = nearest(r, &centroids);
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, r) in data.outer_iter().enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &r);
            counts[labels[i]] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids.row_mut(j).assign(&(&sums.row(j) / counts[j] as f64));
            } else {
                // re-seed at the point farthest from its current centroid
                let far = (0..m)
                    .max_by(|&a, &b| {
                        let da = sq_dist(data.row(a), centroids.row(labels[a]));
                        let db = sq_dist(data.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("non-empty data");
                log::debug!("k-means cluster {j} emptied; re-seeding at point {far}");
                centroids.row_mut(j).assign(&data.row(far));
                labels[far] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, r) in data.outer_iter().enumerate() {
        labels[i] = nearest(r, &centroids).0;
    }
    let inertia = data
        .outer_iter()
        .zip(&labels)
        .map(|(r, &j)| sq_dist(r, centroids.row(j)))
        .sum();
    KMeansResult {
        centroids,
        labels,
        inertia,
    }
}

/// Lloyd's k-means from a seeded k-means++ start, best of `restarts` runs.
pub fn kmeans_restarts(data: ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let m = data.nrows();
    if k == 0 || m < k {
        return Err(Error::invalid(format!("k-means needs at least k = {k} rows, got {m}")));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("k-means input must be finite"));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = substream(seed, "kmeans", r as u64);
        let run = lloyd(data, kmeans_plus_plus(data, k, &mut rng), 300);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans(data: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_restarts(data, k, seed, DecConfig::default().kmeans_restarts)
}

fn check_shapes(e: &ArrayView2<f64>, centroids: &ArrayView2<f64>) -> Result<()> {
    if e.ncols() != centroids.ncols() {
        return Err(Error::DimensionMismatch {
            context: "embedding vs centroid dimension",
            expected: centroids.ncols(),
            got: e.ncols(),
        });
    }
    if centroids.nrows() == 0 {
        return Err(Error::invalid("no centroids"));
    }
    Ok(())
}

/// Student-t kernel `(1 + d²/α)^{-(α+1)/2}` normalised over centroids.
pub fn soft_assignment(e: ArrayView2<f64>, centroids: ArrayView2<f64>, alpha: f64) -> Result<Array2<f64>> {
    check_shapes(&e, &centroids)?;
    let exponent = -(alpha + 1.0) / 2.0;
    let mut q = Array2::zeros((e.nrows(), centroids.nrows()));
    for (i, z) in e.outer_iter().enumerate() {
        let mut row = q.row_mut(i);
        for (j, u) in centroids.outer_iter().enumerate() {
            row[j] = (1.0 + sq_dist(z, u) / alpha).powf(exponent);
        }
        let s = row.sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Divergence(format!("soft assignment of row {i} is degenerate (kernel sum {s})")));
        }
        row /= s;
    }
    Ok(q)
}

/// Square the assignments, divide by cluster frequency and renormalise rows.
pub fn target_distribution(q: ArrayView2<f64>) -> Array2<f64> {
    let freq = q.sum_axis(Axis(0));
    let mut p = q.mapv(|v| v * v);
    for mut row in p.outer_iter_mut() {
        Zip::from(&mut row).and(&freq).for_each(|v, &f| *v /= f);
        let s = row.sum();
        row /= s;
    }
    p
}

/// `Σ p log(p/q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: ArrayView2<f64>, q: ArrayView2<f64>) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            context: "KL divergence operands",
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut total = 0.0;
    for ((idx, &pv), &qv) in p.indexed_iter().zip(q.iter()) {
        if pv > 0.0 {
            if qv <= 0.0 {
                return Err(Error::invalid(format!(
                    "KL divergence is infinite: q is zero where p = {pv} at {idx:?}"
                )));
            }
            total += pv * (pv / qv).ln();
        }
    }
    Ok(total)
}

/// Gradients of `KL(P‖Q)` with `P` held fixed, with respect to the
/// embeddings and the centroids.
pub fn kl_gradients(
    e: ArrayView2<f64>,
    centroids: ArrayView2<f64>,
    p: ArrayView2<f64>,
    q: ArrayView2<f64>,
    alpha: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_shapes(&e, &centroids)?;
    if p.dim() != q.dim() || p.dim() != (e.nrows(), centroids.nrows()) {
        return Err(Error::DimensionMismatch {
            context: "assignment shape",
            expected: e.nrows() * centroids.nrows(),
            got: p.len(),
        });
    }
    let scale = (alpha + 1.0) / alpha;
    let mut gz = Array2::zeros(e.dim());
    let mut gu = Array2::zeros(centroids.dim());
    for (i, z) in e.outer_iter().enumerate() {
        for (j, u) in centroids.outer_iter().enumerate() {
            let diff = &z - &u;
            let w = scale * (p[[i, j]] - q[[i, j]]) / (1.0 + diff.dot(&diff) / alpha);
            gz.row_mut(i).scaled_add(w, &diff);
            gu.row_mut(j).scaled_add(-w, &diff);
        }
    }
    Ok((gz, gu))
}

/// Row-wise argmax, ties resolved to the lowest index.
pub fn hard_assignment(q: ArrayView2<f64>) -> Vec<usize> {
    q.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub k: usize,
    pub alpha: f64,
    pub centroids: Array2<f64>,
    pub q: Array2<f64>,
    pub p: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DecOutcome {
    pub encoder: DenseStack,
    pub state: ClusterState,
    pub labels: Vec<usize>,
    pub kmeans_labels: Vec<usize>,
    /// Refinement epochs actually run.
    pub iterations: usize,
    pub converged: bool,
    /// Mean KL divergence per row, recorded at each target update.
    pub losses: Vec<f64>,
    /// Fraction of changed labels at each target update after the first.
    pub label_changes: Vec<f64>,
}

fn fraction_changed(a: &[usize], b: &[usize]) -> f64 {
    let n = a.iter().zip(b).filter(|(x, y)| x != y).count();
    n as f64 / a.len().max(1) as f64
}

/// Refine `encoder` and the k-means centroids of its embeddings of `x` by
/// minimising the KL divergence to a periodically recomputed target.
pub fn dec_train(encoder: &DenseStack, x: ArrayView2<f64>, cfg: &DecConfig) -> Result<DecOutcome> {
    cfg.validate()?;
    let m = x.nrows();
    let e0 = encoder.predict(x)?;
    let init = kmeans_restarts(e0.view(), cfg.k, cfg.seed, cfg.kmeans_restarts)?;
    let mut encoder = encoder.clone();
    let mut centroids = init.centroids.clone();
    let mut previous = init.labels.clone();
    let mut opt = Sgd::new(cfg.learning_rate, 0.0);
    let mut shuffle_rng = substream(cfg.seed, "dec/shuffle", 0);
    let mut p = Array2::zeros((m, cfg.k));
    let mut losses = Vec::new();
    let mut label_changes = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let mut iter = 0;
    loop {
        if iter % cfg.target_update_interval == 0 {
            let e = encoder.predict(x)?;
            let q = soft_assignment(e.view(), centroids.view(), cfg.alpha)?;
            p = target_distribution(q.view());
            let loss = kl_divergence(p.view(), q.view())? / m as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "clustering loss became {loss} at epoch {iter} (learning rate {})",
                    cfg.learning_rate
                )));
            }
            losses.push(loss);
            let labels = hard_assignment(q.view());
            if iter > 0 {
                let change = fraction_changed(&labels, &previous);
                label_changes.push(change);
                log::debug!("dec epoch {iter}: kl {loss:.6}, labels changed {change:.4}");
                if change < cfg.stop_tolerance {
                    converged = true;
                    break;
                }
            }
            previous = labels;
        }
        if iter >= cfg.max_iterations {
            break;
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), idx);
            let pb = p.select(Axis(0), idx);
            let cache = encoder.forward(xb.view(), None)?;
            let qb = soft_assignment(cache.output.view(), centroids.view(), cfg.alpha)?;
            let (mut gz, mut gu) = kl_gradients(cache.output.view(), centroids.view(), pb.view(), qb.view(), cfg.alpha)?;
            let inv = 1.0 / idx.len() as f64;
            gz *= inv;
            gu *= inv;
            let grads = encoder.backward(&cache, gz.view())?;
            opt.step(&mut encoder, &grads.layers)?;
            centroids.scaled_add(-cfg.learning_rate, &gu);
            if centroids.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "centroids became non-finite at epoch {iter} (learning rate {})",
                    cfg.learning_rate
                )));
            }
        }
        iter += 1;
        iterations = iter;
    }

    let e = encoder.predict(x)?;
    let q = soft_assignment(e.view(), centroids.view(), cfg.alpha)?;
    let labels = hard_assignment(q.view());
    let p = target_distribution(q.view());
    Ok(DecOutcome {
        encoder,
        state: ClusterState {
            k: cfg.k,
            alpha: cfg.alpha,
            centroids,
            q,
            p,
        },
        labels,
        kmeans_labels: init.labels,
        iterations,
        converged,
        losses,
        label_changes,
    })
}

/// Per-cluster member counts.
pub fn cluster_sizes(labels: &[usize], k: usize) -> Array1<usize> {
    let mut counts = Array1::zeros(k);
    for &l in labels {
        if l < k {
            counts[l] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn soft_assignment_example() {
        let q = soft_assignment(array![[0.0]].view(), array![[1.0], [2.0]].view(), 1.0).unwrap();
        assert_abs_diff_eq!(q[[0, 0]], 0.7143, epsilon = 1e-4);
        assert_abs_diff_eq!(q[[0, 1]], 0.2857, epsilon = 1e-4);
        let eq = soft_assignment(array![[0.0, 0.0]].view(), array![[1.0, 0.0], [-1.0, 0.0]].view(), 1.0).unwrap();
        assert_eq!(eq.row(0).to_vec(), vec![0.5, 0.5]);
        let dup = soft_assignment(array![[1.0]].view(), array![[1.0], [1.0]].view(), 1.0).unwrap();
        assert_eq!(dup.row(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn target_examples() {
        let p = target_distribution(array![[0.9, 0.1], [0.6, 0.4]].view());
        assert_abs_diff_eq!(p[[0, 0]], 0.9643, epsilon = 1e-4);
        assert_abs_diff_eq!(p[[0, 1]], 0.0357, epsilon = 1e-4);
        assert_abs_diff_eq!(p[[1, 0]], 0.4286, epsilon = 1e-4);
        assert_abs_diff_eq!(p[[1, 1]], 0.5714, epsilon = 1e-4);
        let single = target_distribution(array![[0.8, 0.2]].view());
        assert_abs_diff_eq!(single[[0, 0]], 0.8, epsilon = 1e-12);
        let uniform = target_distribution(Array2::from_elem((4, 3), 1.0 / 3.0).view());
        assert!(uniform.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn kl_examples() {
        let q = array![[0.3, 0.7]];
        assert_eq!(kl_divergence(q.view(), q.view()).unwrap(), 0.0);
        let v = kl_divergence(array![[1.0, 0.0]].view(), array![[0.5, 0.5]].view()).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(kl_divergence(array![[0.5, 0.5]].view(), array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn argmax_ties() {
        let labels = hard_assignment(array![[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]].view());
        assert_eq!(labels, vec![1, 0]);
    }

    #[test]
    fn kmeans_basics() {
        let data = array![[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]];
        let one = kmeans(data.view(), 1, 0).unwrap();
        assert_abs_diff_eq!(one.centroids[[0, 0]], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(one.centroids[[0, 1]], 5.0, epsilon = 1e-12);
        let pts = array![[0.0], [0.0], [0.0], [10.0], [10.0]];
        let two = kmeans(pts.view(), 2, 1).unwrap();
        let mut c: Vec<f64> = two.centroids.column(0).to_vec();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert!(kmeans(pts.view(), 6, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = DecConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.k = 1;
        assert!(cfg.validate().is_err());
        cfg.k = 3;
        cfg.stop_tolerance = 1.5;
        assert!(cfg.validate().is_err());
    }
}
