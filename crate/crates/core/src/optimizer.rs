//! Criterion maximization: k-means initialization followed by repeated
//! Kernighan-Lin style sweeps, with optional random restarts.
//!
//! One sweep:
//! 1. against the frozen labeling, find for every row and column the label
//!    that maximizes the criterion with everything else fixed, and its gain;
//! 2. apply those relabelings in decreasing order of recorded gain (the
//!    gains go stale as earlier moves land), skipping moves that would push a
//!    class below its minimum size, tracking the running criterion;
//! 3. keep the prefix of step 2 with the highest running criterion.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::criterion::{block_stats, criterion_value, transfer_delta, CompensatedSum, Rate};
use crate::error::{Error, Result};
use crate::kmeans::kmeans_init;
use crate::model::{class_counts, DataMatrix, LabelAssignment};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// Gains within this absolute distance count as ties.
pub const TIE_EPS: f64 = 1e-12;

pub const DEFAULT_KMEANS_STARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    pub l: usize,
    pub rate: Rate,
    pub restarts: usize,
    pub max_sweeps: usize,
    /// Minimum class proportion; classes keep at least `ceil(min_frac * m)`
    /// rows (and `ceil(min_frac * n)` columns), and never fewer than one.
    pub min_frac: f64,
    pub kmeans_iters: usize,
    /// k-means++ seedings per side; the lowest-inertia run is kept.
    pub kmeans_starts: usize,
    pub seed: u64,
    /// Stop when a sweep improves the criterion by at most `tol * |F|`.
    pub tol: f64,
    /// Fraction of items randomly relabeled after k-means on restarts > 0.
    pub perturb_frac: f64,
}

impl FitConfig {
    pub fn new(k: usize, l: usize, rate: Rate) -> Self {
        Self {
            k,
            l,
            rate,
            restarts: 1,
            max_sweeps: 100,
            min_frac: 0.0,
            kmeans_iters: 100,
            kmeans_starts: DEFAULT_KMEANS_STARTS,
            seed: 0,
            tol: 1e-9,
            perturb_frac: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.k == 0 || self.l == 0 {
            return bad(format!("K and L must be positive, got K={}, L={}", self.k, self.l));
        }
        if self.restarts == 0 || self.max_sweeps == 0 || self.kmeans_iters == 0 || self.kmeans_starts == 0 {
            return bad("restarts, max_sweeps, kmeans_iters and kmeans_starts must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.min_frac) {
            return bad(format!("min_frac must lie in [0, 0.5), got {}", self.min_frac));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return bad(format!("tol must be non-negative, got {}", self.tol));
        }
        if !(0.0..=1.0).contains(&self.perturb_frac) {
            return bad(format!("perturb_frac must lie in [0, 1], got {}", self.perturb_frac));
        }
        Ok(())
    }

    /// Minimum (row, column) class sizes for an `m x n` matrix.
    pub fn min_sizes(&self, m: usize, n: usize) -> (usize, usize) {
        min_sizes(self.min_frac, m, n)
    }
}

pub fn min_sizes(min_frac: f64, m: usize, n: usize) -> (usize, usize) {
    let size = |len: usize| ((min_frac * len as f64).ceil() as usize).max(1);
    (size(m), size(n))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub labels: LabelAssignment,
    pub criterion: f64,
    /// Criterion at the start and after every sweep of the winning restart.
    pub sweep_trajectory: Vec<f64>,
    pub restart_index: usize,
    pub converged: bool,
    pub moves_applied: usize,
}

impl FitResult {
    pub fn sweeps(&self) -> usize {
        self.sweep_trajectory.len() - 1
    }
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Row(usize),
    Col(usize),
}

/// Mutable labeling with incrementally maintained sufficient statistics.
struct SweepState<'a> {
    x: &'a DataMatrix,
    xt: &'a DataMatrix,
    rate: Rate,
    k: usize,
    l: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_counts: Vec<usize>,
    col_counts: Vec<usize>,
    sums: Vec<CompensatedSum>,
    /// Current values of `sums`, `K x L` and transposed `L x K`.
    sum_vals: Vec<f64>,
    sum_vals_t: Vec<f64>,
    /// Row `i` summed over each column class, `m x L`.
    row_line: Vec<f64>,
    /// Column `j` summed over each row class, `n x K`.
    col_line: Vec<f64>,
    criterion: f64,
}

impl<'a> SweepState<'a> {
    fn new(x: &'a DataMatrix, xt: &'a DataMatrix, labels: &LabelAssignment, rate: Rate) -> Result<Self> {
        labels.check_matches(x)?;
        let mut st = SweepState {
            x,
            xt,
            rate,
            k: labels.k,
            l: labels.l,
            rows: labels.rows.clone(),
            cols: labels.cols.clone(),
            row_counts: Vec::new(),
            col_counts: Vec::new(),
            sums: Vec::new(),
            sum_vals: Vec::new(),
            sum_vals_t: Vec::new(),
            row_line: Vec::new(),
            col_line: Vec::new(),
            criterion: 0.0,
        };
        st.refresh()?;
        Ok(st)
    }

    fn labels(&self) -> LabelAssignment {
        LabelAssignment {
            rows: self.rows.clone(),
            cols: self.cols.clone(),
            k: self.k,
            l: self.l,
        }
    }

    /// Recompute every statistic from the labels.
    fn refresh(&mut self) -> Result<()> {
        let (k, l) = (self.k, self.l);
        let (m, n) = (self.x.nrows(), self.x.ncols());
        let stats = block_stats(self.x, &self.labels())?;
        self.criterion = criterion_value(&stats, self.rate)?;
        self.row_counts = stats.row_counts;
        self.col_counts = stats.col_counts;
        self.sums = vec![CompensatedSum::default(); k * l];
        for (acc, &v) in self.sums.iter_mut().zip(stats.sums.iter()) {
            acc.add(v);
        }
        self.sync_sum_vals();
        self.row_line = vec![0.0; m * l];
        self.col_line = vec![0.0; n * k];
        for i in 0..m {
            let g = self.rows[i];
            let rl = &mut self.row_line[i * l..(i + 1) * l];
            for (j, (&v, &h)) in self.x.row(i).iter().zip(&self.cols).enumerate() {
                rl[h] += v;
                self.col_line[j * k + g] += v;
            }
        }
        Ok(())
    }

    fn sync_sum_vals(&mut self) {
        let (k, l) = (self.k, self.l);
        self.sum_vals = self.sums.iter().map(CompensatedSum::value).collect();
        self.sum_vals_t = (0..l * k).map(|t| self.sum_vals[(t % k) * l + t / k]).collect();
    }

    fn set_sum(&mut self, a: usize, b: usize, add: f64) {
        let (k, l) = (self.k, self.l);
        let acc = &mut self.sums[a * l + b];
        acc.add(add);
        let v = acc.value();
        self.sum_vals[a * l + b] = v;
        self.sum_vals_t[b * k + a] = v;
    }

    fn row_delta(&self, i: usize, to: usize) -> f64 {
        let from = self.rows[i];
        if from == to {
            return 0.0;
        }
        let l = self.l;
        transfer_delta(
            self.rate,
            &self.row_line[i * l..(i + 1) * l],
            &self.col_counts,
            &self.sum_vals[from * l..(from + 1) * l],
            &self.sum_vals[to * l..(to + 1) * l],
            self.row_counts[from],
            self.row_counts[to],
        )
    }

    fn col_delta(&self, j: usize, to: usize) -> f64 {
        let from = self.cols[j];
        if from == to {
            return 0.0;
        }
        let k = self.k;
        transfer_delta(
            self.rate,
            &self.col_line[j * k..(j + 1) * k],
            &self.row_counts,
            &self.sum_vals_t[from * k..(from + 1) * k],
            &self.sum_vals_t[to * k..(to + 1) * k],
            self.col_counts[from],
            self.col_counts[to],
        )
    }

    fn best_move(&self, item: Item, min_row: usize, min_col: usize) -> (usize, f64) {
        let (cur, size, min, classes) = match item {
            Item::Row(i) => (self.rows[i], self.row_counts[self.rows[i]], min_row, self.k),
            Item::Col(j) => (self.cols[j], self.col_counts[self.cols[j]], min_col, self.l),
        };
        let mut best = (cur, 0.0);
        if size <= min {
            return best;
        }
        for to in (0..classes).filter(|&t| t != cur) {
            let d = match item {
                Item::Row(i) => self.row_delta(i, to),
                Item::Col(j) => self.col_delta(j, to),
            };
            if d > best.1 + TIE_EPS {
                best = (to, d);
            }
        }
        best
    }

    fn apply(&mut self, item: Item, to: usize) {
        match item {
            Item::Row(i) => self.apply_row(i, to),
            Item::Col(j) => self.apply_col(j, to),
        }
    }

    fn apply_row(&mut self, i: usize, to: usize) {
        let from = self.rows[i];
        let (k, l) = (self.k, self.l);
        for b in 0..l {
            let r = self.row_line[i * l + b];
            self.set_sum(from, b, -r);
            self.set_sum(to, b, r);
        }
        for (j, &v) in self.x.row(i).iter().enumerate() {
            self.col_line[j * k + from] -= v;
            self.col_line[j * k + to] += v;
        }
        self.row_counts[from] -= 1;
        self.row_counts[to] += 1;
        self.rows[i] = to;
    }

    fn apply_col(&mut self, j: usize, to: usize) {
        let from = self.cols[j];
        let (k, l) = (self.k, self.l);
        for a in 0..k {
            let c = self.col_line[j * k + a];
            self.set_sum(a, from, -c);
            self.set_sum(a, to, c);
        }
        for (i, &v) in self.xt.row(j).iter().enumerate() {
            self.row_line[i * l + from] -= v;
            self.row_line[i * l + to] += v;
        }
        self.col_counts[from] -= 1;
        self.col_counts[to] += 1;
        self.cols[j] = to;
    }

    fn current(&self, item: Item) -> usize {
        match item {
            Item::Row(i) => self.rows[i],
            Item::Col(j) => self.cols[j],
        }
    }

    fn size_of_class(&self, item: Item) -> usize {
        match item {
            Item::Row(i) => self.row_counts[self.rows[i]],
            Item::Col(j) => self.col_counts[self.cols[j]],
        }
    }

    fn delta(&self, item: Item, to: usize) -> f64 {
        match item {
            Item::Row(i) => self.row_delta(i, to),
            Item::Col(j) => self.col_delta(j, to),
        }
    }

    /// One sweep. Returns `(gain, moves kept)`; the gain is never negative.
    fn sweep(&mut self, min_row: usize, min_col: usize) -> Result<(f64, usize)> {
        let start = self.criterion;
        let (m, n) = (self.rows.len(), self.cols.len());

        // Step 1: best single move for every item against the frozen labels.
        let this = &*self;
        let mut candidates: Vec<(f64, Item, usize)> = (0..m + n)
            .into_par_iter()
            .map(|t| {
                let item = if t < m { Item::Row(t) } else { Item::Col(t - m) };
                let (to, d) = this.best_move(item, min_row, min_col);
                (d, item, to)
            })
            .filter(|&(d, item, to)| to != this.current(item) && d > TIE_EPS)
            .collect();
        if candidates.is_empty() {
            return Ok((0.0, 0));
        }
        // Stable: equal gains keep rows-before-columns, ascending index.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));

        // Step 2: apply in order with stale targets, tracking the criterion.
        let mut history: Vec<(Item, usize)> = Vec::with_capacity(candidates.len());
        let mut running = start;
        let mut best = (start, 0usize);
        for &(_, item, to) in &candidates {
            let min = match item {
                Item::Row(_) => min_row,
                Item::Col(_) => min_col,
            };
            if self.size_of_class(item) <= min {
                continue;
            }
            let from = self.current(item);
            running += self.delta(item, to);
            self.apply(item, to);
            history.push((item, from));
            if running > best.0 {
                best = (running, history.len());
            }
        }

        // Step 3: roll back to the best prefix.
        while history.len() > best.1 {
            let (item, from) = history.pop().expect("non-empty");
            self.apply(item, from);
        }
        self.refresh()?;
        if self.criterion < start {
            // Accumulated rounding claimed a gain that the exact value does
            // not confirm; undo the sweep.
            while let Some((item, from)) = history.pop() {
                self.apply(item, from);
            }
            self.refresh()?;
            return Ok((0.0, 0));
        }
        Ok((self.criterion - start, history.len()))
    }
}

fn check_nontrivial(labels: &LabelAssignment, min_row: usize, min_col: usize) -> Result<()> {
    if let Some((k, &c)) = labels.row_counts().iter().enumerate().find(|(_, &c)| c < min_row) {
        return Err(Error::Partition(format!(
            "row class {k} has {c} members, minimum is {min_row}"
        )));
    }
    if let Some((l, &c)) = labels.col_counts().iter().enumerate().find(|(_, &c)| c < min_col) {
        return Err(Error::Partition(format!(
            "column class {l} has {c} members, minimum is {min_col}"
        )));
    }
    Ok(())
}

/// One Kernighan-Lin sweep from `labels`. Returns the improved labeling and
/// its gain in criterion (zero when no prefix improves).
pub fn kl_sweep(x: &DataMatrix, labels: &LabelAssignment, rate: Rate, min_frac: f64) -> Result<(LabelAssignment, f64)> {
    labels.check_matches(x)?;
    rate.check_data(x)?;
    let (min_row, min_col) = min_sizes(min_frac, x.nrows(), x.ncols());
    check_nontrivial(labels, min_row, min_col)?;
    let xt = x.transposed();
    let mut st = SweepState::new(x, &xt, labels, rate)?;
    let (gain, _) = st.sweep(min_row, min_col)?;
    Ok((st.labels(), gain))
}

fn check_fit_inputs(x: &DataMatrix, config: &FitConfig) -> Result<(usize, usize)> {
    config.validate()?;
    let (m, n) = (x.nrows(), x.ncols());
    let (min_row, min_col) = config.min_sizes(m, n);
    if config.k * min_row > m || config.l * min_col > n {
        return Err(Error::InvalidInput(format!(
            "cannot fit K={} row classes of size >= {min_row} into m={m}, or L={} column classes of size >= {min_col} into n={n}",
            config.k, config.l
        )));
    }
    config.rate.check_data(x)?;
    Ok((min_row, min_col))
}

/// Refine a given initial labeling (a single restart).
pub fn fit_from_init(x: &DataMatrix, init: &LabelAssignment, config: &FitConfig) -> Result<FitResult> {
    let (min_row, min_col) = check_fit_inputs(x, config)?;
    if init.k != config.k || init.l != config.l {
        return Err(Error::InvalidInput(format!(
            "initial labels use K={}, L={} but config asks for K={}, L={}",
            init.k, init.l, config.k, config.l
        )));
    }
    check_nontrivial(init, min_row, min_col)?;
    let xt = x.transposed();
    refine(x, &xt, init, config, 0, min_row, min_col)
}

fn refine(
    x: &DataMatrix,
    xt: &DataMatrix,
    init: &LabelAssignment,
    config: &FitConfig,
    restart_index: usize,
    min_row: usize,
    min_col: usize,
) -> Result<FitResult> {
    let mut st = SweepState::new(x, xt, init, config.rate)?;
    let mut trajectory = vec![st.criterion];
    let mut converged = false;
    let mut moves_applied = 0;
    for _ in 0..config.max_sweeps {
        let (gain, moves) = st.sweep(min_row, min_col)?;
        moves_applied += moves;
        trajectory.push(st.criterion);
        if gain <= config.tol * st.criterion.abs() {
            converged = true;
            break;
        }
    }
    Ok(FitResult {
        labels: st.labels(),
        criterion: st.criterion,
        sweep_trajectory: trajectory,
        restart_index,
        converged,
        moves_applied,
    })
}

/// Randomly relabel `frac` of the items of one axis.
fn perturb(labels: &mut [usize], classes: usize, frac: f64, rng: &mut Rng) {
    let count = ((frac * labels.len() as f64).round() as usize).min(labels.len());
    if classes < 2 || count == 0 {
        return;
    }
    for i in sample(rng, labels.len(), count) {
        labels[i] = rng.random_range(0..classes);
    }
}

/// Move random members of the largest classes into classes below `min`.
pub(crate) fn enforce_min_sizes(labels: &mut [usize], classes: usize, min: usize, rng: &mut Rng) {
    debug_assert!(classes * min <= labels.len());
    let mut counts = class_counts(labels, classes);
    while let Some(small) = (0..classes).find(|&c| counts[c] < min) {
        let donor = (0..classes)
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .expect("at least one class");
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == donor).collect();
        let i = members[rng.random_range(0..members.len())];
        labels[i] = small;
        counts[donor] -= 1;
        counts[small] += 1;
    }
}

/// Starting labels for restart `r`: k-means (restart 0 with `config.seed`,
/// later restarts with derived seeds plus random perturbation), then any
/// class below the minimum size is topped up.
pub fn restart_init(x: &DataMatrix, config: &FitConfig, r: usize) -> Result<LabelAssignment> {
    let seed = if r == 0 { config.seed } else { derive_seed(config.seed, r as u64) };
    let mut init = kmeans_init(x, config.k, config.l, seed, config.kmeans_iters, config.kmeans_starts)?;
    let mut rng = rng_from_seed(derive_seed(seed, 2));
    if r > 0 {
        perturb(&mut init.rows, config.k, config.perturb_frac, &mut rng);
        perturb(&mut init.cols, config.l, config.perturb_frac, &mut rng);
    }
    let (min_row, min_col) = config.min_sizes(x.nrows(), x.ncols());
    enforce_min_sizes(&mut init.rows, config.k, min_row, &mut rng);
    enforce_min_sizes(&mut init.cols, config.l, min_col, &mut rng);
    Ok(init)
}

/// Maximize the criterion over labelings; returns the best restart.
pub fn fit(x: &DataMatrix, config: &FitConfig) -> Result<FitResult> {
    let (min_row, min_col) = check_fit_inputs(x, config)?;
    let xt = x.transposed();
    let results: Vec<FitResult> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            restart_init(x, config, r)
                .and_then(|init| refine(x, &xt, &init, config, r, min_row, min_col))
                .map_err(|e| e.context(format!("restart {r}")))
        })
        .collect::<Result<_>>()?;
    let best = results
        .into_iter()
        .reduce(|best, cur| if cur.criterion > best.criterion { cur } else { best })
        .expect("restarts >= 1");
    Ok(best)
}
