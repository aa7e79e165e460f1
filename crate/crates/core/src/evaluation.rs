//! Comparison against ground truth and numerical diagnostics of the
//! consistency argument: confusion matrices, permutation-matched
//! misclassification, the population criterion `G`, residual sup-norms,
//! population gap checks, and the Gaussian finite-sample tail bound.

use itertools::Itertools;
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::criterion::{block_stats, Rate};
use crate::error::{Error, Result};
use crate::model::{means_identifiable, BlockModelSpec, DataMatrix, LabelAssignment};
use crate::rng::{rng_from_seed, Rng};

/// Largest class count for which misclassification enumerates permutations.
pub const MAX_PERMUTATION_CLASSES: usize = 8;

/// Rejection cap when drawing labelings or confusion pairs.
const MAX_REJECTIONS: usize = 10_000;

/// Normalized confusion matrices: `c[[a, k]]` is the fraction of rows with
/// true class `a` and label `k`; `d` likewise for columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionPair {
    pub c: Array2<f64>,
    pub d: Array2<f64>,
}

/// `max_k max_{a != a'} M[a, k] * M[a', k]`: zero exactly when every column
/// has at most one non-zero entry.
pub fn max_offdiag_product(mat: &Array2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for col in mat.columns() {
        for a in 0..col.len() {
            for b in a + 1..col.len() {
                worst = worst.max(col[a] * col[b]);
            }
        }
    }
    worst
}

impl ConfusionPair {
    /// Row confusion lies in the `delta`-neighbourhood of permuted diagonals.
    pub fn rows_within(&self, delta: f64) -> bool {
        max_offdiag_product(&self.c) < delta
    }

    pub fn cols_within(&self, delta: f64) -> bool {
        max_offdiag_product(&self.d) < delta
    }

    pub fn within(&self, delta: f64) -> bool {
        self.rows_within(delta) && self.cols_within(delta)
    }
}

fn check_comparable(truth: &LabelAssignment, estimate: &LabelAssignment) -> Result<()> {
    if truth.m() != estimate.m() || truth.n() != estimate.n() {
        return Err(Error::Dimension(format!(
            "truth is {}x{}, estimate is {}x{}",
            truth.m(),
            truth.n(),
            estimate.m(),
            estimate.n()
        )));
    }
    if truth.k != estimate.k || truth.l != estimate.l {
        return Err(Error::Dimension(format!(
            "truth uses K={}, L={}, estimate uses K={}, L={}",
            truth.k, truth.l, estimate.k, estimate.l
        )));
    }
    Ok(())
}

fn joint_counts(truth: &[usize], est: &[usize], classes: usize) -> Array2<usize> {
    let mut counts = Array2::zeros((classes, classes));
    for (&a, &k) in truth.iter().zip(est) {
        counts[[a, k]] += 1;
    }
    counts
}

pub fn confusion(truth: &LabelAssignment, estimate: &LabelAssignment) -> Result<ConfusionPair> {
    check_comparable(truth, estimate)?;
    let m = truth.m() as f64;
    let n = truth.n() as f64;
    let c = joint_counts(&truth.rows, &estimate.rows, truth.k).mapv(|v| v as f64 / m);
    let d = joint_counts(&truth.cols, &estimate.cols, truth.l).mapv(|v| v as f64 / n);
    Ok(ConfusionPair { c, d })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Misclassification {
    pub row_rate: f64,
    pub col_rate: f64,
    /// `(m * row_rate + n * col_rate) / (m + n)`.
    pub overall: f64,
}

/// Fewest disagreements over all relabelings of the estimate.
fn matched_errors(truth: &[usize], est: &[usize], classes: usize) -> usize {
    let counts = joint_counts(truth, est, classes);
    let agree = (0..classes)
        .permutations(classes)
        .map(|perm| (0..classes).map(|k| counts[[perm[k], k]]).sum::<usize>())
        .max()
        .unwrap_or(0);
    truth.len() - agree
}

/// Misclassification rates after the best label permutation (exhaustive
/// search, `K, L <= 8`).
pub fn misclassification(truth: &LabelAssignment, estimate: &LabelAssignment) -> Result<Misclassification> {
    check_comparable(truth, estimate)?;
    if truth.k > MAX_PERMUTATION_CLASSES || truth.l > MAX_PERMUTATION_CLASSES {
        return Err(Error::Unsupported(format!(
            "permutation matching is limited to K, L <= {MAX_PERMUTATION_CLASSES}, got K={}, L={}",
            truth.k, truth.l
        )));
    }
    let row_err = matched_errors(&truth.rows, &estimate.rows, truth.k);
    let col_err = matched_errors(&truth.cols, &estimate.cols, truth.l);
    let (m, n) = (truth.m(), truth.n());
    Ok(Misclassification {
        row_rate: row_err as f64 / m as f64,
        col_rate: col_err as f64 / n as f64,
        overall: (row_err + col_err) as f64 / (m + n) as f64,
    })
}

fn check_stochastic(name: &str, mat: &Array2<f64>) -> Result<()> {
    if !mat.is_square() {
        return Err(Error::Dimension(format!("{name} must be square, got {:?}", mat.dim())));
    }
    if mat.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} has negative or non-finite entries")));
    }
    let total = mat.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("{name} entries sum to {total}, not 1")));
    }
    Ok(())
}

/// Population criterion
/// `G(C, D) = sum_kl [C'1]_k [D'1]_l f([C' M0 D]_kl / ([C'1]_k [D'1]_l))`.
pub fn population_criterion(c: &Array2<f64>, d: &Array2<f64>, m0: &Array2<f64>, rate: Rate) -> Result<f64> {
    check_stochastic("C", c)?;
    check_stochastic("D", d)?;
    if m0.dim() != (c.nrows(), d.nrows()) {
        return Err(Error::Dimension(format!(
            "M0 is {:?} but confusion matrices imply ({}, {})",
            m0.dim(),
            c.nrows(),
            d.nrows()
        )));
    }
    let row_mass = c.sum_axis(ndarray::Axis(0));
    let col_mass = d.sum_axis(ndarray::Axis(0));
    if let Some(k) = row_mass.iter().position(|&v| v <= 0.0) {
        return Err(Error::Partition(format!("label {k} of C carries no mass")));
    }
    if let Some(l) = col_mass.iter().position(|&v| v <= 0.0) {
        return Err(Error::Partition(format!("label {l} of D carries no mass")));
    }
    let mixed = c.t().dot(m0).dot(d);
    let mut total = 0.0;
    for ((k, l), &v) in mixed.indexed_iter() {
        let w = row_mass[k] * col_mass[l];
        total += w * rate.value(v / w)?;
    }
    Ok(total)
}

/// `sum_ab [C1]_a [D1]_b f(M0_ab)`: the population criterion at the truth.
pub fn population_at_truth(p: &[f64], q: &[f64], m0: &Array2<f64>, rate: Rate) -> Result<f64> {
    let mut total = 0.0;
    for ((a, b), &mu) in m0.indexed_iter() {
        total += p[a] * q[b] * rate.value(mu)?;
    }
    Ok(total)
}

/// Outcome of [`population_gap_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub trials: usize,
    /// Samples with `G(C, D) >= G(truth)`.
    pub violations: usize,
    /// Largest (closest to zero) observed `G(C, D) - G(truth)`.
    pub worst_gap: f64,
    /// `min over samples of -gap / (eta^2 * delta)`.
    pub kappa_hat: f64,
    pub eta: f64,
    pub seed: u64,
}

fn dirichlet_ones(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|v| v / total).collect()
}

/// Confusion matrix with prescribed true-class margins: row `a` is
/// `margins[a]` times a Dirichlet(1, ..., 1) vector.
pub fn random_confusion(rng: &mut Rng, margins: &[f64]) -> Array2<f64> {
    let k = margins.len();
    let mut out = Array2::zeros((k, k));
    for (a, &p) in margins.iter().enumerate() {
        for (b, v) in dirichlet_ones(rng, k).into_iter().enumerate() {
            out[[a, b]] = p * v;
        }
    }
    out
}

/// Sample confusion pairs with margins `p`, `q` away from the permuted
/// diagonals and check that the population criterion falls strictly below
/// its value at the truth. Each trial draws `delta ~ U(0, 0.05)` and rejects
/// pairs inside both `delta`-neighbourhoods.
pub fn population_gap_check(
    m0: &Array2<f64>,
    rate: Rate,
    p: &[f64],
    q: &[f64],
    trials: usize,
    seed: u64,
) -> Result<GapReport> {
    if m0.dim() != (p.len(), q.len()) {
        return Err(Error::Dimension(format!(
            "M0 is {:?}, margins have lengths {} and {}",
            m0.dim(),
            p.len(),
            q.len()
        )));
    }
    if !means_identifiable(m0) {
        return Err(Error::InvalidInput(
            "mean matrix is not identifiable: two rows or two columns coincide".into(),
        ));
    }
    let at_truth = population_at_truth(p, q, m0, rate)?;
    let eta = p.iter().chain(q).copied().fold(f64::INFINITY, f64::min);
    let mut rng = rng_from_seed(seed);
    let mut report = GapReport {
        trials,
        violations: 0,
        worst_gap: f64::NEG_INFINITY,
        kappa_hat: f64::INFINITY,
        eta,
        seed,
    };
    for _ in 0..trials {
        let mut attempts = 0;
        let (pair, delta) = loop {
            let delta = rng.random::<f64>() * 0.05;
            let pair = ConfusionPair {
                c: random_confusion(&mut rng, p),
                d: random_confusion(&mut rng, q),
            };
            if delta > 0.0 && !pair.within(delta) {
                break (pair, delta);
            }
            attempts += 1;
            if attempts >= MAX_REJECTIONS {
                return Err(Error::InvalidInput(
                    "could not sample a confusion pair outside the neighbourhood".into(),
                ));
            }
        };
        let gap = population_criterion(&pair.c, &pair.d, m0, rate)? - at_truth;
        if gap >= 0.0 {
            report.violations += 1;
        }
        report.worst_gap = report.worst_gap.max(gap);
        report.kappa_hat = report.kappa_hat.min(-gap / (eta * eta * delta));
    }
    Ok(report)
}

/// `E(g, h)`: expected bicluster means given the true labels and means.
pub fn expected_means(truth: &LabelAssignment, labels: &LabelAssignment, means: &Array2<f64>) -> Result<Array2<f64>> {
    let pair = confusion(truth, labels)?;
    let row_mass = pair.c.sum_axis(ndarray::Axis(0));
    let col_mass = pair.d.sum_axis(ndarray::Axis(0));
    let mixed = pair.c.t().dot(means).dot(&pair.d);
    Ok(Array2::from_shape_fn(mixed.dim(), |(k, l)| {
        mixed[[k, l]] / (row_mass[k] * col_mass[l])
    }))
}

/// `|| (X_bar(g, h) - E(g, h)) / rho ||_inf` for one labeling.
pub fn residual_norm(x: &DataMatrix, truth: &LabelAssignment, labels: &LabelAssignment, spec: &BlockModelSpec) -> Result<f64> {
    let stats = block_stats(x, labels)?;
    if stats.row_counts.contains(&0) || stats.col_counts.contains(&0) {
        return Err(Error::Partition("residual needs every class non-empty".into()));
    }
    let expected = expected_means(truth, labels, &spec.means)?;
    let observed = stats.means();
    Ok(observed
        .iter()
        .zip(expected.iter())
        .map(|(o, e)| ((o - e) / spec.rho).abs())
        .fold(0.0, f64::max))
}

fn random_labels(rng: &mut Rng, len: usize, classes: usize, epsilon: f64) -> Result<Vec<usize>> {
    for _ in 0..MAX_REJECTIONS {
        let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..classes)).collect();
        let mut counts = vec![0usize; classes];
        for &g in &labels {
            counts[g] += 1;
        }
        if counts.iter().all(|&c| c as f64 / len as f64 > epsilon) {
            return Ok(labels);
        }
    }
    Err(Error::Partition(format!(
        "no labeling with all class proportions above {epsilon} after {MAX_REJECTIONS} draws"
    )))
}

/// Largest residual sup-norm over `samples` random labelings with every
/// class proportion above `epsilon`. A lower bound on the supremum over
/// all such labelings.
pub fn residual_supnorm(
    x: &DataMatrix,
    truth: &LabelAssignment,
    spec: &BlockModelSpec,
    samples: usize,
    epsilon: f64,
    seed: u64,
) -> Result<f64> {
    truth.check_matches(x)?;
    if truth.k != spec.k() || truth.l != spec.l() {
        return Err(Error::Dimension("truth labels and spec disagree on K, L".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let rows = random_labels(&mut rng, x.nrows(), spec.k(), epsilon)?;
        let cols = random_labels(&mut rng, x.ncols(), spec.l(), epsilon)?;
        let labels = LabelAssignment::new(rows, cols, spec.k(), spec.l())?;
        worst = worst.max(residual_norm(x, truth, &labels, spec)?);
    }
    Ok(worst)
}

/// Inputs of the Gaussian finite-sample bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBoundInput {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// Lower bound on squared gaps between means in the same column (or row).
    pub tau: f64,
    pub sigma: f64,
    /// `sup |f'|` over a neighbourhood of the means.
    pub c_lip: f64,
    /// Smallest bicluster size over admissible labelings.
    pub t_n: u64,
}

impl TailBoundInput {
    /// Upper end of the admissible `delta` range,
    /// `min(1, 8 c sigma min(K^2, L^2) / (tau eps^2))`.
    pub fn delta_limit(&self) -> f64 {
        let kl2 = (self.k.min(self.l) as f64).powi(2);
        (8.0 * self.c_lip * self.sigma * kl2 / (self.tau * self.epsilon * self.epsilon)).min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.k == 0 || self.l == 0 || self.t_n == 0 {
            return Err(Error::InvalidInput("m, n, K, L and T_n must be positive".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        for (name, v) in [("tau", self.tau), ("sigma", self.sigma), ("c", self.c_lip)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        let limit = self.delta_limit();
        if !(self.delta > 0.0 && self.delta < limit) {
            return Err(Error::InvalidInput(format!(
                "delta = {} violates 0 < delta < min(1, 8 c sigma min(K^2, L^2) / (tau eps^2)) = {limit}",
                self.delta
            )));
        }
        Ok(())
    }

    /// `T_n tau^2 eps^4 delta^2 / (256 c^2 sigma^2 min(K^4, L^4))`.
    pub fn exponent(&self) -> f64 {
        let kl4 = (self.k.min(self.l) as f64).powi(4);
        self.t_n as f64 * self.tau.powi(2) * self.epsilon.powi(4) * self.delta.powi(2)
            / (256.0 * self.c_lip.powi(2) * self.sigma.powi(2) * kl4)
    }

    /// Natural log of the unclamped bound.
    pub fn log_bound(&self) -> f64 {
        std::f64::consts::LN_2
            + (self.m as f64 + 1.0) * (self.k as f64).ln()
            + (self.n as f64 + 1.0) * (self.l as f64).ln()
            - self.exponent()
    }
}

/// `min(1, 2 K^(m+1) L^(n+1) exp(-T_n tau^2 eps^4 delta^2 / (256 c^2 sigma^2 min(K^4, L^4))))`,
/// evaluated in log space.
pub fn gaussian_tail_bound(input: &TailBoundInput) -> Result<f64> {
    input.validate()?;
    let log_b = input.log_bound();
    Ok(if log_b >= 0.0 { 1.0 } else { log_b.exp() })
}

/// Smallest squared gap between two means sharing a column, or two means
/// sharing a row.
pub fn min_squared_gap(means: &Array2<f64>) -> f64 {
    let mut tau = f64::INFINITY;
    for col in means.columns() {
        for (a, b) in (0..col.len()).tuple_combinations() {
            tau = tau.min((col[a] - col[b]).powi(2));
        }
    }
    for row in means.rows() {
        for (a, b) in (0..row.len()).tuple_combinations() {
            tau = tau.min((row[a] - row[b]).powi(2));
        }
    }
    tau
}

/// Smallest bicluster size when every class proportion must exceed
/// `epsilon`: `(floor(eps m) + 1) * (floor(eps n) + 1)`.
pub fn min_bicluster_size(m: usize, n: usize, epsilon: f64) -> u64 {
    let smallest = |len: usize| (epsilon * len as f64).floor() as u64 + 1;
    smallest(m) * smallest(n)
}

/// One diagnostic measurement, serialized as a JSON record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRecord {
    pub metric: String,
    pub value: f64,
    pub samples: usize,
    pub seed: u64,
}

impl DiagnosticRecord {
    pub fn new(metric: impl Into<String>, value: f64, samples: usize, seed: u64) -> Self {
        Self {
            metric: metric.into(),
            value,
            samples,
            seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}
