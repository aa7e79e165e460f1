//! Rate functions, per-bicluster sufficient statistics and the
//! profile-likelihood criterion
//!
//! ```text
//! F(g, h) = sum_kl N_kl * f(S_kl / N_kl)
//! ```
//!
//! where `S_kl` is the sum of the entries whose row label is `k` and column
//! label is `l`, and `N_kl` their count. The fitting scale is fixed at one.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{DataMatrix, LabelAssignment};

/// Slack accepted at the boundary of a rate's domain before reporting an
/// error. Sums of valid data can land a few ulps outside after subtraction.
const DOMAIN_SLACK: f64 = 1e-12;

/// Convex rate function applied to bicluster means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rate {
    /// `mu log mu + (1 - mu) log(1 - mu)` on `[0, 1]`.
    Bernoulli,
    /// `mu log mu - mu` on `[0, inf)`.
    Poisson,
    /// `mu^2 / 2` on the real line.
    Gaussian,
}

impl Rate {
    pub const ALL: [Rate; 3] = [Rate::Bernoulli, Rate::Poisson, Rate::Gaussian];

    /// Closed interval of valid means.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Rate::Bernoulli => (0.0, 1.0),
            Rate::Poisson => (0.0, f64::INFINITY),
            Rate::Gaussian => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn contains(&self, mu: f64) -> bool {
        let (lo, hi) = self.domain();
        mu >= lo - DOMAIN_SLACK && mu <= hi + DOMAIN_SLACK
    }

    /// Rate value at `mu`; boundary points use their limits (`0 log 0 = 0`).
    pub fn value(&self, mu: f64) -> Result<f64> {
        if !mu.is_finite() || !self.contains(mu) {
            return Err(Error::Domain(format!(
                "mean {mu} is outside the domain of the {self} rate"
            )));
        }
        Ok(self.value_unchecked(mu))
    }

    /// Same as [`Rate::value`] but clamps to the domain instead of failing.
    #[inline]
    pub fn value_unchecked(&self, mu: f64) -> f64 {
        match self {
            Rate::Gaussian => 0.5 * mu * mu,
            Rate::Poisson => {
                if mu <= 0.0 {
                    0.0
                } else {
                    mu * mu.ln() - mu
                }
            }
            Rate::Bernoulli => {
                if mu <= 0.0 || mu >= 1.0 {
                    0.0
                } else {
                    mu * mu.ln() + (1.0 - mu) * (1.0 - mu).ln()
                }
            }
        }
    }

    /// First derivative (infinite at the Bernoulli/Poisson boundaries).
    pub fn derivative(&self, mu: f64) -> f64 {
        match self {
            Rate::Gaussian => mu,
            Rate::Poisson => mu.ln(),
            Rate::Bernoulli => (mu / (1.0 - mu)).ln(),
        }
    }

    /// Reject data whose entries fall outside the rate's domain, naming the
    /// first offending cell in row-major order.
    pub fn check_data(&self, x: &DataMatrix) -> Result<()> {
        let n = x.ncols();
        let (lo, hi) = self.domain();
        if let Some(pos) = x.as_slice().iter().position(|&v| v < lo || v > hi) {
            return Err(Error::Domain(format!(
                "{self} rate needs entries in [{lo}, {hi}], found {} at row {}, column {}",
                x.as_slice()[pos],
                pos / n,
                pos % n
            )));
        }
        Ok(())
    }

    /// Contribution `count * f(sum / count)` of one bicluster; empty blocks
    /// contribute nothing.
    #[inline]
    pub fn block_term(&self, sum: f64, count: usize) -> f64 {
        if count == 0 {
            return 0.0;
        }
        let c = count as f64;
        c * self.value_unchecked(sum / c)
    }

    fn checked_block_term(&self, sum: f64, count: usize) -> Result<f64> {
        if count == 0 {
            return Ok(0.0);
        }
        let c = count as f64;
        Ok(c * self.value(sum / c)?)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rate::Bernoulli => "bernoulli",
            Rate::Poisson => "poisson",
            Rate::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bernoulli" | "binomial" => Ok(Rate::Bernoulli),
            "poisson" => Ok(Rate::Poisson),
            "gaussian" | "normal" => Ok(Rate::Gaussian),
            _ => Err(Error::InvalidInput(format!("unknown rate function '{s}'"))),
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Row or column move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Row,
    Col,
}

/// Sufficient statistics of a labeling: bicluster sums and sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    /// `S_kl`, `K x L`.
    pub sums: Array2<f64>,
    /// `N_kl = row_counts[k] * col_counts[l]`.
    pub counts: Array2<usize>,
    pub row_counts: Vec<usize>,
    pub col_counts: Vec<usize>,
}

impl BlockStats {
    pub fn k(&self) -> usize {
        self.row_counts.len()
    }

    pub fn l(&self) -> usize {
        self.col_counts.len()
    }

    /// Bicluster means `S_kl / N_kl` (NaN for empty blocks).
    pub fn means(&self) -> Array2<f64> {
        let mut out = Array2::from_elem(self.sums.dim(), f64::NAN);
        for ((kl, &s), &c) in self.sums.indexed_iter().zip(self.counts.iter()) {
            if c > 0 {
                out[kl] = s / c as f64;
            }
        }
        out
    }

    /// Row-class proportions `p_hat`.
    pub fn row_props(&self) -> Vec<f64> {
        let m: usize = self.row_counts.iter().sum();
        self.row_counts.iter().map(|&c| c as f64 / m as f64).collect()
    }

    /// Column-class proportions `q_hat`.
    pub fn col_props(&self) -> Vec<f64> {
        let n: usize = self.col_counts.iter().sum();
        self.col_counts.iter().map(|&c| c as f64 / n as f64).collect()
    }

    fn require_nontrivial(&self) -> Result<()> {
        if let Some(k) = self.row_counts.iter().position(|&c| c == 0) {
            return Err(Error::Partition(format!("row class {k} is empty")));
        }
        if let Some(l) = self.col_counts.iter().position(|&c| c == 0) {
            return Err(Error::Partition(format!("column class {l} is empty")));
        }
        Ok(())
    }
}

/// Exact per-bicluster sums and counts.
pub fn block_stats(x: &DataMatrix, labels: &LabelAssignment) -> Result<BlockStats> {
    labels.check_matches(x)?;
    let (k, l) = (labels.k, labels.l);
    let n = x.ncols();
    let mut acc = vec![CompensatedSum::default(); k * l];
    for (i, &g) in labels.rows.iter().enumerate() {
        let row = &x.as_slice()[i * n..(i + 1) * n];
        let acc_row = &mut acc[g * l..(g + 1) * l];
        for (&v, &h) in row.iter().zip(&labels.cols) {
            acc_row[h].add(v);
        }
    }
    let row_counts = labels.row_counts();
    let col_counts = labels.col_counts();
    let sums = Array2::from_shape_vec((k, l), acc.iter().map(CompensatedSum::value).collect())
        .expect("shape matches");
    let counts = Array2::from_shape_fn((k, l), |(a, b)| row_counts[a] * col_counts[b]);
    Ok(BlockStats {
        sums,
        counts,
        row_counts,
        col_counts,
    })
}

/// Criterion `F = sum_kl N_kl f(S_kl / N_kl)`.
///
/// Block terms are summed in sorted order so that the result is bit-for-bit
/// independent of how the classes are numbered.
pub fn criterion_value(stats: &BlockStats, rate: Rate) -> Result<f64> {
    stats.require_nontrivial()?;
    let mut terms = stats
        .sums
        .iter()
        .zip(stats.counts.iter())
        .map(|(&s, &c)| rate.checked_block_term(s, c))
        .collect::<Result<Vec<f64>>>()?;
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum())
}

/// Change in the criterion when moving the blocks of one class to another.
///
/// `line[t]` is the sum of the moving item against opposite class `t`,
/// `line_counts[t]` the size of opposite class `t`; `src_sums[t]` and
/// `dst_sums[t]` are the current block sums of the source and destination
/// classes, whose sizes are `src_size` and `dst_size`.
#[inline]
pub(crate) fn transfer_delta(
    rate: Rate,
    line: &[f64],
    line_counts: &[usize],
    src_sums: &[f64],
    dst_sums: &[f64],
    src_size: usize,
    dst_size: usize,
) -> f64 {
    let mut delta = 0.0;
    for t in 0..line.len() {
        let c = line_counts[t];
        let (s, d, r) = (src_sums[t], dst_sums[t], line[t]);
        delta += rate.block_term(s - r, (src_size - 1) * c) + rate.block_term(d + r, (dst_size + 1) * c)
            - rate.block_term(s, src_size * c)
            - rate.block_term(d, dst_size * c);
    }
    delta
}

/// Sum of row `index` (or column `index`) against each opposite class.
pub(crate) fn line_sums(x: &DataMatrix, labels: &LabelAssignment, axis: Axis, index: usize) -> Vec<f64> {
    match axis {
        Axis::Row => {
            let mut acc = vec![CompensatedSum::default(); labels.l];
            for (&v, &h) in x.row(index).iter().zip(&labels.cols) {
                acc[h].add(v);
            }
            acc.iter().map(CompensatedSum::value).collect()
        }
        Axis::Col => {
            let mut acc = vec![CompensatedSum::default(); labels.k];
            for (i, &g) in labels.rows.iter().enumerate() {
                acc[g].add(x.get(i, index));
            }
            acc.iter().map(CompensatedSum::value).collect()
        }
    }
}

/// `F(after) - F(before)` for relabeling one row or column, touching only
/// the `2L` (row move) or `2K` (column move) affected blocks.
pub fn move_delta(
    stats: &BlockStats,
    x: &DataMatrix,
    labels: &LabelAssignment,
    axis: Axis,
    index: usize,
    new_label: usize,
    rate: Rate,
) -> Result<f64> {
    labels.check_matches(x)?;
    stats.require_nontrivial()?;
    let (len, classes) = match axis {
        Axis::Row => (labels.m(), labels.k),
        Axis::Col => (labels.n(), labels.l),
    };
    if index >= len {
        return Err(Error::InvalidInput(format!("{axis:?} index {index} out of range 0..{len}")));
    }
    if new_label >= classes {
        return Err(Error::InvalidInput(format!(
            "label {new_label} out of range 0..{classes}"
        )));
    }
    let old = match axis {
        Axis::Row => labels.rows[index],
        Axis::Col => labels.cols[index],
    };
    if old == new_label {
        return Ok(0.0);
    }
    let (own_counts, other_counts) = match axis {
        Axis::Row => (&stats.row_counts, &stats.col_counts),
        Axis::Col => (&stats.col_counts, &stats.row_counts),
    };
    if own_counts[old] <= 1 {
        return Err(Error::Partition(format!(
            "moving {axis:?} {index} would empty class {old}"
        )));
    }
    let line = line_sums(x, labels, axis, index);
    let (src, dst): (Vec<f64>, Vec<f64>) = match axis {
        Axis::Row => (stats.sums.row(old).to_vec(), stats.sums.row(new_label).to_vec()),
        Axis::Col => (
            stats.sums.column(old).to_vec(),
            stats.sums.column(new_label).to_vec(),
        ),
    };
    // Domain check on every block mean after the move.
    for t in 0..line.len() {
        let c = other_counts[t];
        let after_src = (src[t] - line[t], (own_counts[old] - 1) * c);
        let after_dst = (dst[t] + line[t], (own_counts[new_label] + 1) * c);
        for (s, cnt) in [after_src, after_dst] {
            rate.checked_block_term(s, cnt)?;
        }
    }
    Ok(transfer_delta(
        rate,
        &line,
        other_counts,
        &src,
        &dst,
        own_counts[old],
        own_counts[new_label],
    ))
}
