//! Data matrices, label assignments, block-model specifications and the
//! seeded synthetic generator.

use std::fmt;
use std::str::FromStr;

use ndarray::{array, Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson, StudentT};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Maximum number of label redraws when a sampled class comes out empty.
pub const MAX_LABEL_RETRIES: usize = 100;

/// A dense, finite, row-major `m x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
}

impl DataMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (m, n) = values.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput(format!(
                "matrix must be non-empty, got {m}x{n}"
            )));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite entry {v} at row {i}, column {j}"
            )));
        }
        // Standard layout lets the hot loops work on plain slices.
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {n}",
                rows[i].len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((m, n), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(values)
    }

    pub fn from_shape_vec(m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        let values = Array2::from_shape_vec((m, n), data)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(values)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    /// Row-major backing slice.
    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("DataMatrix is always in standard layout")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ncols();
        &self.as_slice()[i * n..(i + 1) * n]
    }

    /// Row-major copy of the transpose (columns become contiguous).
    pub fn transposed(&self) -> DataMatrix {
        DataMatrix {
            values: self.values.t().as_standard_layout().into_owned(),
        }
    }

    /// Reorder rows so that new row `i` is old row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<DataMatrix> {
        if perm.len() != self.nrows() {
            return Err(Error::Dimension("row permutation length".into()));
        }
        let n = self.ncols();
        let mut out = Vec::with_capacity(self.nrows() * n);
        for &p in perm {
            out.extend_from_slice(self.row(p));
        }
        DataMatrix::from_shape_vec(self.nrows(), n, out)
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }
}

/// Row labels `g` in `0..k` and column labels `h` in `0..l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct LabelAssignment {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub k: usize,
    pub l: usize,
}

impl LabelAssignment {
    pub fn new(rows: Vec<usize>, cols: Vec<usize>, k: usize, l: usize) -> Result<Self> {
        if k == 0 || l == 0 {
            return Err(Error::InvalidInput(format!(
                "class counts must be positive, got K={k}, L={l}"
            )));
        }
        if k > rows.len() || l > cols.len() {
            return Err(Error::InvalidInput(format!(
                "need K <= m and L <= n, got K={k}, m={}, L={l}, n={}",
                rows.len(),
                cols.len()
            )));
        }
        if let Some(i) = rows.iter().position(|&g| g >= k) {
            return Err(Error::InvalidInput(format!(
                "row {i} has label {} outside 0..{k}",
                rows[i]
            )));
        }
        if let Some(j) = cols.iter().position(|&h| h >= l) {
            return Err(Error::InvalidInput(format!(
                "column {j} has label {} outside 0..{l}",
                cols[j]
            )));
        }
        Ok(Self { rows, cols, k, l })
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn n(&self) -> usize {
        self.cols.len()
    }

    pub fn row_counts(&self) -> Vec<usize> {
        class_counts(&self.rows, self.k)
    }

    pub fn col_counts(&self) -> Vec<usize> {
        class_counts(&self.cols, self.l)
    }

    /// Apply relabeling maps: row label `g` becomes `row_map[g]`, column
    /// label `h` becomes `col_map[h]`.
    pub fn relabeled(&self, row_map: &[usize], col_map: &[usize]) -> LabelAssignment {
        LabelAssignment {
            rows: self.rows.iter().map(|&g| row_map[g]).collect(),
            cols: self.cols.iter().map(|&h| col_map[h]).collect(),
            k: self.k,
            l: self.l,
        }
    }

    pub fn check_matches(&self, x: &DataMatrix) -> Result<()> {
        if self.m() != x.nrows() || self.n() != x.ncols() {
            return Err(Error::Dimension(format!(
                "labels are {}x{} but matrix is {}x{}",
                self.m(),
                self.n(),
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

pub(crate) fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &g in labels {
        counts[g] += 1;
    }
    counts
}

/// Conditional distribution of an entry given its block mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Bernoulli,
    Poisson,
    Gaussian { sigma: f64 },
    /// Location-scale Student's t: `mu + scale * T(df)`.
    StudentT { df: f64, scale: f64 },
}

impl Family {
    /// Standard deviation of an entry with mean `mu` (infinite for `df <= 2`).
    pub fn sd(&self, mu: f64) -> f64 {
        match *self {
            Family::Bernoulli => (mu * (1.0 - mu)).max(0.0).sqrt(),
            Family::Poisson => mu.max(0.0).sqrt(),
            Family::Gaussian { sigma } => sigma,
            Family::StudentT { df, scale } => {
                if df > 2.0 {
                    scale * (df / (df - 2.0)).sqrt()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    fn check_params(&self) -> Result<()> {
        match *self {
            Family::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidInput(format!("Gaussian sigma must be positive, got {sigma}")),
            ),
            Family::StudentT { df, scale }
                if !(df > 0.0 && scale > 0.0 && df.is_finite() && scale.is_finite()) =>
            {
                Err(Error::InvalidInput(format!(
                    "Student-t needs df > 0 and scale > 0, got df={df}, scale={scale}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn supports_mean(&self, mu: f64) -> bool {
        match self {
            Family::Bernoulli => (0.0..=1.0).contains(&mu),
            Family::Poisson => mu >= 0.0,
            _ => true,
        }
    }
}

/// Ground-truth block model: class probabilities, block means and family.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockModelSpec {
    pub row_probs: Vec<f64>,
    pub col_probs: Vec<f64>,
    /// Actual block means `mu_kl` (already scaled, i.e. `rho * M0`).
    pub means: Array2<f64>,
    /// Scale factor relating `means` to the fixed shape matrix `M0`.
    pub rho: f64,
    pub family: Family,
}

impl BlockModelSpec {
    pub fn k(&self) -> usize {
        self.row_probs.len()
    }

    pub fn l(&self) -> usize {
        self.col_probs.len()
    }

    /// `M0 = means / rho`.
    pub fn base_means(&self) -> Array2<f64> {
        &self.means / self.rho
    }

    pub fn validate(&self) -> Result<()> {
        let (k, l) = (self.k(), self.l());
        if k == 0 || l == 0 {
            return Err(Error::InvalidInput("K and L must be positive".into()));
        }
        if self.means.dim() != (k, l) {
            return Err(Error::Dimension(format!(
                "mean matrix is {:?}, expected ({k}, {l})",
                self.means.dim()
            )));
        }
        check_probs("row", &self.row_probs)?;
        check_probs("column", &self.col_probs)?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        self.family.check_params()?;
        for ((a, b), &mu) in self.means.indexed_iter() {
            if !mu.is_finite() || !self.family.supports_mean(mu) {
                return Err(Error::Domain(format!(
                    "block ({a}, {b}) mean {mu} is outside the support of the {:?} family",
                    self.family
                )));
            }
        }
        Ok(())
    }

    /// No two rows of the mean matrix are equal and no two columns are equal.
    pub fn is_identifiable(&self) -> bool {
        means_identifiable(&self.means)
    }
}

pub(crate) fn means_identifiable(means: &Array2<f64>) -> bool {
    let rows = means.rows().into_iter().collect::<Vec<_>>();
    let cols = means.columns().into_iter().collect::<Vec<_>>();
    let distinct = |v: &[ndarray::ArrayView1<f64>]| {
        v.iter()
            .enumerate()
            .all(|(i, a)| v[i + 1..].iter().all(|b| a != b))
    };
    distinct(&rows) && distinct(&cols)
}

fn check_probs(what: &str, probs: &[f64]) -> Result<()> {
    if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what} probabilities must be non-negative: {probs:?}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "{what} probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// The four simulation designs reproduced by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Design {
    /// Sparse Poisson counts, means `b / sqrt(n) * base`.
    Poisson,
    /// Sparse binary data, means `b / sqrt(n) * base`.
    Bernoulli,
    /// Dense Gaussian data, means `b * base`, unit variance.
    Gaussian,
    /// Dense location-scale t data with 4 degrees of freedom.
    StudentT,
}

pub const ROW_PROBS: [f64; 2] = [0.3, 0.7];
pub const COL_PROBS: [f64; 3] = [0.2, 0.3, 0.5];

impl Design {
    pub const ALL: [Design; 4] = [
        Design::Poisson,
        Design::Bernoulli,
        Design::Gaussian,
        Design::StudentT,
    ];

    /// Unscaled 2x3 mean pattern of the design.
    pub fn base_matrix(&self) -> Array2<f64> {
        match self {
            Design::Poisson => array![[0.92, 0.77, 1.66], [0.17, 1.41, 1.45]],
            Design::Bernoulli => array![[0.43, 0.06, 0.13], [0.10, 0.34, 0.17]],
            Design::Gaussian | Design::StudentT => {
                array![[0.47, 0.15, -0.60], [-0.26, 0.82, 0.80]]
            }
        }
    }

    /// Block-model specification for signal strength `b` and `n` columns.
    ///
    /// Sparse designs use `rho = b / sqrt(n)` with `M0 = base`; dense designs
    /// use `rho = 1` with `M0 = b * base`.
    pub fn spec(&self, b: f64, n: usize) -> Result<BlockModelSpec> {
        if n == 0 {
            return Err(Error::InvalidInput("n must be positive".into()));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidInput(format!("b must be positive, got {b}")));
        }
        let base = self.base_matrix();
        let (rho, family) = match self {
            Design::Poisson => (b / (n as f64).sqrt(), Family::Poisson),
            Design::Bernoulli => (b / (n as f64).sqrt(), Family::Bernoulli),
            Design::Gaussian => (1.0, Family::Gaussian { sigma: 1.0 }),
            Design::StudentT => (1.0, Family::StudentT { df: 4.0, scale: 1.0 }),
        };
        let means = match self {
            Design::Poisson | Design::Bernoulli => base * rho,
            Design::Gaussian | Design::StudentT => base * b,
        };
        let spec = BlockModelSpec {
            row_probs: ROW_PROBS.to_vec(),
            col_probs: COL_PROBS.to_vec(),
            means,
            rho,
            family,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Design::Poisson => "Poisson",
            Design::Bernoulli => "Bernoulli",
            Design::Gaussian => "Gaussian",
            Design::StudentT => "StudentT",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" | "poissons5" => Ok(Design::Poisson),
            "bernoulli" | "bernoullic" => Ok(Design::Bernoulli),
            "gaussian" | "gaussianc" => Ok(Design::Gaussian),
            "studentt" | "student-t" | "t" | "studenttc" => Ok(Design::StudentT),
            _ => Err(Error::InvalidInput(format!("unknown design '{s}'"))),
        }
    }
}

/// Convenience wrapper around [`Design::spec`].
pub fn paper_spec(design: Design, b: f64, n: usize) -> Result<BlockModelSpec> {
    design.spec(b, n)
}

/// One draw from a block model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub data: DataMatrix,
    pub truth: LabelAssignment,
    /// How many times the labels were redrawn because a class was empty.
    pub label_retries: usize,
}

/// Draw an `m x n` matrix and its ground-truth labels.
///
/// Labels are i.i.d. categorical(`row_probs`) / categorical(`col_probs`);
/// entries are drawn row-major from the family given their block mean.
/// Draw order: row labels, column labels, entries.
pub fn generate(spec: &BlockModelSpec, m: usize, n: usize, seed: u64) -> Result<Sample> {
    spec.validate()?;
    let (k, l) = (spec.k(), spec.l());
    if m < k || n < l {
        return Err(Error::InvalidInput(format!(
            "need m >= K and n >= L, got m={m}, K={k}, n={n}, L={l}"
        )));
    }
    let mut rng = rng_from_seed(seed);

    let mut label_retries = 0;
    let (rows, cols) = loop {
        let rows = draw_labels(&mut rng, &spec.row_probs, m);
        let cols = draw_labels(&mut rng, &spec.col_probs, n);
        let full = class_counts(&rows, k).iter().all(|&c| c > 0)
            && class_counts(&cols, l).iter().all(|&c| c > 0);
        if full {
            break (rows, cols);
        }
        label_retries += 1;
        if label_retries >= MAX_LABEL_RETRIES {
            return Err(Error::Partition(format!(
                "could not draw labels with every class non-empty in {MAX_LABEL_RETRIES} attempts (m={m}, n={n})"
            )));
        }
    };

    let samplers: Vec<EntrySampler> = spec
        .means
        .iter()
        .map(|&mu| EntrySampler::new(spec.family, mu))
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(m * n);
    for &g in &rows {
        let block_row = &samplers[g * l..(g + 1) * l];
        for &h in &cols {
            data.push(block_row[h].draw(&mut rng));
        }
    }
    let data = DataMatrix::from_shape_vec(m, n, data)?;
    let truth = LabelAssignment::new(rows, cols, k, l)?;
    Ok(Sample {
        data,
        truth,
        label_retries,
    })
}

fn draw_labels(rng: &mut Rng, probs: &[f64], len: usize) -> Vec<usize> {
    let last = probs.len() - 1;
    (0..len)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (c, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c;
                }
            }
            // Rounding left u above the cumulative total; take the last
            // class with positive mass.
            (0..=last).rev().find(|&c| probs[c] > 0.0).unwrap_or(last)
        })
        .collect()
}

enum EntrySampler {
    Constant(f64),
    Bernoulli(f64),
    Poisson(Poisson<f64>),
    Gaussian(Normal<f64>),
    StudentT { mu: f64, scale: f64, t: StudentT<f64> },
}

impl EntrySampler {
    fn new(family: Family, mu: f64) -> Result<Self> {
        let bad = |e: &dyn fmt::Display| Error::Domain(format!("mean {mu}: {e}"));
        Ok(match family {
            Family::Bernoulli => EntrySampler::Bernoulli(mu),
            Family::Poisson if mu == 0.0 => EntrySampler::Constant(0.0),
            Family::Poisson => EntrySampler::Poisson(Poisson::new(mu).map_err(|e| bad(&e))?),
            Family::Gaussian { sigma } => {
                EntrySampler::Gaussian(Normal::new(mu, sigma).map_err(|e| bad(&e))?)
            }
            Family::StudentT { df, scale } => EntrySampler::StudentT {
                mu,
                scale,
                t: StudentT::new(df).map_err(|e| bad(&e))?,
            },
        })
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        match self {
            EntrySampler::Constant(v) => *v,
            EntrySampler::Bernoulli(p) => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            EntrySampler::Poisson(d) => d.sample(rng),
            EntrySampler::Gaussian(d) => d.sample(rng),
            EntrySampler::StudentT { mu, scale, t } => mu + scale * t.sample(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_block_degenerate() {
        let spec = BlockModelSpec {
            row_probs: vec![1.0],
            col_probs: vec![1.0],
            means: array![[0.0]],
            rho: 1.0,
            family: Family::Gaussian { sigma: 1.0 },
        };
        let s = generate(&spec, 2, 2, 9).unwrap();
        assert_eq!(s.truth.rows, vec![0, 0]);
        assert_eq!(s.truth.cols, vec![0, 0]);
        assert_eq!(s.data.nrows(), 2);
        assert_eq!(s.label_retries, 0);
    }

    #[test]
    fn bernoulli_mean_out_of_support() {
        let spec = BlockModelSpec {
            row_probs: vec![1.0],
            col_probs: vec![0.5, 0.5],
            means: array![[0.2, 1.2]],
            rho: 1.0,
            family: Family::Bernoulli,
        };
        let err = generate(&spec, 4, 4, 0).unwrap_err();
        match err {
            Error::Domain(msg) => assert!(msg.contains("(0, 1)"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn design_entries() {
        let s = Design::Poisson.spec(20.0, 400).unwrap();
        assert!((s.means[[0, 2]] - 1.66).abs() < 1e-12);
        let s = Design::Gaussian.spec(1.0, 100).unwrap();
        assert!((s.means[[1, 0]] + 0.26).abs() < 1e-12);
        assert_eq!(s.family, Family::Gaussian { sigma: 1.0 });
        let s = Design::Bernoulli.spec(5.0, 2500).unwrap();
        assert!((s.means[[0, 0]] - 0.043).abs() < 1e-12);
        let s = Design::StudentT.spec(2.0, 100).unwrap();
        assert_eq!(s.family, Family::StudentT { df: 4.0, scale: 1.0 });
        assert!((s.means[[0, 2]] + 1.2).abs() < 1e-12);
        assert_eq!(s.row_probs, vec![0.3, 0.7]);
        assert_eq!(s.col_probs, vec![0.2, 0.3, 0.5]);
        assert!("nonsense".parse::<Design>().is_err());
    }

    #[test]
    fn poisson_row_proportion() {
        let spec = Design::Poisson.spec(10.0, 500).unwrap();
        let s = generate(&spec, 500, 500, 2024).unwrap();
        let frac = s.truth.row_counts()[0] as f64 / 500.0;
        assert!((frac - 0.3).abs() <= 0.07, "{frac}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = Design::StudentT.spec(1.0, 30).unwrap();
        let a = generate(&spec, 30, 30, 5).unwrap();
        let b = generate(&spec, 30, 30, 5).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec, 30, 30, 6).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn degenerate_labels_are_redrawn() {
        // With m=2 and p=(0.5,0.5) roughly half of the first draws leave a
        // class empty; every returned sample must still be full.
        let spec = BlockModelSpec {
            row_probs: vec![0.5, 0.5],
            col_probs: vec![1.0],
            means: array![[0.0], [1.0]],
            rho: 1.0,
            family: Family::Gaussian { sigma: 1.0 },
        };
        let mut retried = 0;
        for seed in 0..50 {
            let s = generate(&spec, 2, 3, seed).unwrap();
            assert!(s.truth.row_counts().iter().all(|&c| c == 1));
            retried += s.label_retries;
        }
        assert!(retried > 0);
    }

    #[test]
    fn identifiability() {
        assert!(Design::Poisson.spec(10.0, 100).unwrap().is_identifiable());
        let spec = BlockModelSpec {
            row_probs: vec![0.5, 0.5],
            col_probs: vec![1.0],
            means: array![[1.0], [1.0]],
            rho: 1.0,
            family: Family::Poisson,
        };
        assert!(!spec.is_identifiable());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(DataMatrix::from_rows(&[vec![1.0, f64::NAN]]).is_err());
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(LabelAssignment::new(vec![0, 2], vec![0], 2, 1).is_err());
        assert!(LabelAssignment::new(vec![0], vec![0], 2, 1).is_err());
        let spec = BlockModelSpec {
            row_probs: vec![0.5, 0.6],
            col_probs: vec![1.0],
            means: array![[1.0], [2.0]],
            rho: 1.0,
            family: Family::Poisson,
        };
        assert!(spec.validate().is_err());
    }
}
