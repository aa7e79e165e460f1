//! Monte-Carlo driver for the block-model simulation studies.
//!
//! A plan is a grid `gamma x n x b` over one design. Every grid cell is
//! replicated; each replicate draws one data set and runs every requested
//! method on it, so methods are always compared on identical data. The
//! profile-likelihood methods start from the same k-means labels that the
//! `KM` baseline reports.
//!
//! Seeds: cell `c` of the grid (enumerated gamma-major, then n, then b) and
//! replicate `r` use `rep_seed = derive_seed(derive_seed(plan.seed, c), r)`;
//! data are drawn from `derive_seed(rep_seed, 0)` and k-means is seeded with
//! `derive_seed(rep_seed, 1)`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criterion::Rate;
use crate::error::{Error, Result};
use crate::evaluation::misclassification;
use crate::kmeans::kmeans_init;
use crate::model::{generate, Design};
use crate::optimizer::{fit, fit_from_init, FitConfig, DEFAULT_KMEANS_STARTS};
use crate::rng::derive_seed;

/// Fitting method compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Profile likelihood with the Poisson rate.
    PlPois,
    /// Profile likelihood with the Gaussian rate.
    PlGaus,
    /// Profile likelihood with the Bernoulli rate.
    PlBern,
    /// k-means on rows and columns separately.
    Km,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::PlPois => "PL-Pois",
            Method::PlGaus => "PL-Gaus",
            Method::PlBern => "PL-Bern",
            Method::Km => "KM",
        }
    }

    pub fn rate(&self) -> Option<Rate> {
        match self {
            Method::PlPois => Some(Rate::Poisson),
            Method::PlGaus => Some(Rate::Gaussian),
            Method::PlBern => Some(Rate::Bernoulli),
            Method::Km => None,
        }
    }

    /// Whether the method's rate accepts every value the design can produce.
    pub fn compatible_with(&self, design: Design) -> bool {
        match self {
            Method::PlBern => design == Design::Bernoulli,
            Method::PlPois => matches!(design, Design::Poisson | Design::Bernoulli),
            Method::PlGaus | Method::Km => true,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pl-pois" => Ok(Method::PlPois),
            "pl-gaus" | "pl-norm" => Ok(Method::PlGaus),
            "pl-bern" => Ok(Method::PlBern),
            "km" => Ok(Method::Km),
            _ => Err(Error::InvalidInput(format!("unknown method '{s}'"))),
        }
    }
}

/// A simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPlan {
    pub design: Design,
    pub n_values: Vec<usize>,
    pub gamma_values: Vec<f64>,
    pub b_values: Vec<f64>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    /// Restarts per profile-likelihood fit.
    pub restarts: usize,
    pub max_sweeps: usize,
    pub kmeans_iters: usize,
    pub kmeans_starts: usize,
    /// Record wall-clock times; off by default so record files are
    /// byte-reproducible.
    pub timing: bool,
}

/// On-disk plan schema (TOML key = value pairs).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    design: String,
    n_values: Vec<usize>,
    gamma_values: Vec<toml::Value>,
    b_values: Vec<toml::Value>,
    replicates: usize,
    methods: Vec<String>,
    seed: u64,
    output: Option<String>,
    restarts: Option<usize>,
    max_sweeps: Option<usize>,
    kmeans_iters: Option<usize>,
    kmeans_starts: Option<usize>,
    timing: Option<bool>,
}

fn as_real(v: &toml::Value, key: &str) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(Error::Parse(format!("{key}: expected a number, got {other}"))),
    }
}

impl SimPlan {
    pub fn new(design: Design, n_values: Vec<usize>, gamma_values: Vec<f64>, b_values: Vec<f64>, replicates: usize, methods: Vec<Method>, seed: u64) -> Self {
        Self {
            design,
            n_values,
            gamma_values,
            b_values,
            replicates,
            methods,
            seed,
            output_path: None,
            restarts: 1,
            max_sweeps: 100,
            kmeans_iters: 100,
            kmeans_starts: DEFAULT_KMEANS_STARTS,
            timing: false,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: PlanFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let design: Design = raw.design.parse()?;
        let methods = raw
            .methods
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<Method>>>()?;
        let gamma_values = raw
            .gamma_values
            .iter()
            .map(|v| as_real(v, "gamma_values"))
            .collect::<Result<_>>()?;
        let b_values = raw
            .b_values
            .iter()
            .map(|v| as_real(v, "b_values"))
            .collect::<Result<_>>()?;
        let mut plan = SimPlan::new(design, raw.n_values, gamma_values, b_values, raw.replicates, methods, raw.seed);
        plan.output_path = raw.output.map(PathBuf::from);
        plan.restarts = raw.restarts.unwrap_or(1);
        plan.max_sweeps = raw.max_sweeps.unwrap_or(100);
        plan.kmeans_iters = raw.kmeans_iters.unwrap_or(100);
        plan.kmeans_starts = raw.kmeans_starts.unwrap_or(DEFAULT_KMEANS_STARTS);
        plan.timing = raw.timing.unwrap_or(false);
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.n_values.is_empty() || self.gamma_values.is_empty() || self.b_values.is_empty() || self.methods.is_empty() {
            return bad("n_values, gamma_values, b_values and methods must be non-empty".into());
        }
        if self.replicates == 0 || self.restarts == 0 || self.max_sweeps == 0 || self.kmeans_iters == 0 || self.kmeans_starts == 0 {
            return bad("replicates, restarts, max_sweeps, kmeans_iters and kmeans_starts must be at least 1".into());
        }
        if let Some(g) = self.gamma_values.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return bad(format!("gamma must be positive, got {g}"));
        }
        if let Some(b) = self.b_values.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return bad(format!("b must be positive, got {b}"));
        }
        if let Some(m) = self.methods.iter().find(|m| !m.compatible_with(self.design)) {
            return bad(format!("method {m} cannot be used on {} data", self.design));
        }
        let distinct: BTreeSet<_> = self.methods.iter().collect();
        if distinct.len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        for cell in self.cells() {
            let spec = self.design.spec(cell.b, cell.n)?;
            if cell.m < spec.k() || cell.n < spec.l() {
                return bad(format!("cell n={}, gamma={} is too small", cell.n, cell.gamma));
            }
        }
        Ok(())
    }

    /// Grid cells, gamma-major then n then b.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &gamma in &self.gamma_values {
            for &n in &self.n_values {
                for &b in &self.b_values {
                    out.push(Cell {
                        index: out.len(),
                        n,
                        m: (gamma * n as f64).round() as usize,
                        gamma,
                        b,
                    });
                }
            }
        }
        out
    }

    pub fn replicate_seed(&self, cell: usize, replicate: usize) -> u64 {
        derive_seed(derive_seed(self.seed, cell as u64), replicate as u64)
    }

    pub fn expected_records(&self) -> usize {
        self.cells().len() * self.replicates * self.methods.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    pub b: f64,
}

/// One method on one replicate of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub design: String,
    pub n: usize,
    pub m: usize,
    pub gamma: f64,
    pub b: f64,
    pub method: String,
    pub replicate: usize,
    pub seed: u64,
    pub row_rate: f64,
    pub col_rate: f64,
    pub overall: f64,
    pub criterion: f64,
    pub sweeps: usize,
    pub wall_time_ms: f64,
    /// Empty on success.
    pub error: String,
}

impl SimRecord {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

fn run_replicate(plan: &SimPlan, cell: &Cell, replicate: usize) -> Vec<SimRecord> {
    let seed = plan.replicate_seed(cell.index, replicate);
    let base = SimRecord {
        design: plan.design.name().to_string(),
        n: cell.n,
        m: cell.m,
        gamma: cell.gamma,
        b: cell.b,
        method: String::new(),
        replicate,
        seed,
        row_rate: f64::NAN,
        col_rate: f64::NAN,
        overall: f64::NAN,
        criterion: f64::NAN,
        sweeps: 0,
        wall_time_ms: 0.0,
        error: String::new(),
    };
    let fail = |method: Method, err: &Error| {
        log::warn!(
            "{} n={} gamma={} b={} replicate {replicate} {method}: {err}",
            plan.design,
            cell.n,
            cell.gamma,
            cell.b
        );
        SimRecord {
            method: method.name().to_string(),
            error: err.to_string(),
            ..base.clone()
        }
    };

    let sample = match plan
        .design
        .spec(cell.b, cell.n)
        .and_then(|spec| generate(&spec, cell.m, cell.n, derive_seed(seed, 0)))
    {
        Ok(s) => s,
        Err(e) => return plan.methods.iter().map(|&m| fail(m, &e)).collect(),
    };
    let (k, l) = (sample.truth.k, sample.truth.l);
    let fit_seed = derive_seed(seed, 1);
    let km_start = Instant::now();
    let init = kmeans_init(&sample.data, k, l, fit_seed, plan.kmeans_iters, plan.kmeans_starts);
    let km_ms = km_start.elapsed().as_secs_f64() * 1e3;
    let init = match init {
        Ok(i) => i,
        Err(e) => return plan.methods.iter().map(|&m| fail(m, &e)).collect(),
    };

    plan.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = match method.rate() {
                None => misclassification(&sample.truth, &init).map(|r| (r, f64::NAN, 0)),
                Some(rate) => {
                    let mut cfg = FitConfig::new(k, l, rate);
                    cfg.seed = fit_seed;
                    cfg.restarts = plan.restarts;
                    cfg.max_sweeps = plan.max_sweeps;
                    cfg.kmeans_iters = plan.kmeans_iters;
                    cfg.kmeans_starts = plan.kmeans_starts;
                    let res = if plan.restarts == 1 {
                        fit_from_init(&sample.data, &init, &cfg)
                    } else {
                        fit(&sample.data, &cfg)
                    };
                    res.and_then(|f| {
                        misclassification(&sample.truth, &f.labels).map(|r| (r, f.criterion, f.sweeps()))
                    })
                }
            };
            let elapsed = start.elapsed().as_secs_f64() * 1e3 + km_ms;
            match outcome {
                Ok((rates, criterion, sweeps)) => SimRecord {
                    method: method.name().to_string(),
                    row_rate: rates.row_rate,
                    col_rate: rates.col_rate,
                    overall: rates.overall,
                    criterion,
                    sweeps,
                    wall_time_ms: if plan.timing { elapsed } else { 0.0 },
                    ..base.clone()
                },
                Err(e) => fail(method, &e),
            }
        })
        .collect()
}

/// Run every cell, replicate and method, handing records to `sink` in a
/// fixed order (cell, replicate, method). Work is parallel over replicates
/// in batches; each batch is delivered before the next one starts.
pub fn run_plan<F>(plan: &SimPlan, mut sink: F) -> Result<usize>
where
    F: FnMut(&SimRecord) -> Result<()>,
{
    plan.validate()?;
    let cells = plan.cells();
    let units: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..plan.replicates).map(move |r| (c, r)))
        .collect();
    let batch = (2 * rayon::current_num_threads()).max(1);
    let mut emitted = 0;
    for chunk in units.chunks(batch) {
        let results: Vec<Vec<SimRecord>> = chunk
            .par_iter()
            .map(|&(c, r)| run_replicate(plan, &cells[c], r))
            .collect();
        for rec in results.iter().flatten() {
            sink(rec)?;
            emitted += 1;
        }
    }
    Ok(emitted)
}

pub fn run_plan_collect(plan: &SimPlan) -> Result<Vec<SimRecord>> {
    let mut out = Vec::with_capacity(plan.expected_records());
    run_plan(plan, |r| {
        out.push(r.clone());
        Ok(())
    })?;
    Ok(out)
}

/// CSV record writer that flushes after every record so partial runs keep
/// everything written so far.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(w: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn write(&mut self, rec: &SimRecord) -> Result<()> {
        self.inner.serialize(rec)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_records<R: std::io::Read>(r: R) -> Result<Vec<SimRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Per (gamma, n, b, method) statistics of the overall misclassification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub design: String,
    pub gamma: f64,
    pub n: usize,
    pub m: usize,
    pub b: f64,
    pub method: String,
    pub count: usize,
    pub failures: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for one record.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

fn method_rank(name: &str) -> (usize, String) {
    match name.parse::<Method>() {
        Ok(m) => (m as usize, String::new()),
        Err(_) => (usize::MAX, name.to_string()),
    }
}

pub fn aggregate(records: &[SimRecord]) -> Result<Vec<SummaryRow>> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no records to aggregate".into()))?;
    if let Some(r) = records.iter().find(|r| r.design != first.design) {
        return Err(Error::InvalidInput(format!(
            "records mix designs {} and {}",
            first.design, r.design
        )));
    }
    let mut sorted: Vec<&SimRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.gamma
            .total_cmp(&b.gamma)
            .then(a.n.cmp(&b.n))
            .then(a.b.total_cmp(&b.b))
            .then(method_rank(&a.method).cmp(&method_rank(&b.method)))
    });
    let same = |a: &SimRecord, b: &SimRecord| {
        a.gamma == b.gamma && a.n == b.n && a.b == b.b && a.method == b.method
    };
    let mut out = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && same(sorted[start], sorted[end]) {
            end += 1;
        }
        let group = &sorted[start..end];
        let ok: Vec<f64> = group.iter().filter(|r| !r.failed()).map(|r| r.overall).collect();
        let (mean, sd, min, max) = describe(&ok);
        let head = group[0];
        out.push(SummaryRow {
            design: head.design.clone(),
            gamma: head.gamma,
            n: head.n,
            m: head.m,
            b: head.b,
            method: head.method.clone(),
            count: ok.len(),
            failures: group.len() - ok.len(),
            mean,
            sd,
            min,
            max,
        });
        start = end;
    }
    Ok(out)
}

/// Mean, sample SD, min and max (NaN when empty; SD 0 for one value).
pub fn describe(values: &[f64]) -> (f64, f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, sd, min, max)
}

pub fn write_summary_csv<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Wide table of standard deviations: one block of rows per gamma, one row
/// per n, one column per (method, b).
pub fn write_sd_table<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.sort_by_key(|m| method_rank(m));
    methods.dedup();
    let mut bs: Vec<f64> = rows.iter().map(|r| r.b).collect();
    bs.sort_by(f64::total_cmp);
    bs.dedup();

    let mut wtr = csv::WriterBuilder::new().flexible(false).from_writer(w);
    let mut header = vec!["gamma".to_string(), "n".to_string()];
    for m in &methods {
        for b in &bs {
            header.push(format!("{m} b={b}"));
        }
    }
    wtr.write_record(&header)?;

    let mut keys: Vec<(f64, usize)> = rows.iter().map(|r| (r.gamma, r.n)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keys.dedup();
    for (gamma, n) in keys {
        let mut line = vec![gamma.to_string(), n.to_string()];
        for m in &methods {
            for b in &bs {
                let cell = rows
                    .iter()
                    .find(|r| r.gamma == gamma && r.n == n && r.b == *b && r.method == *m)
                    .map(|r| format!("{:.4}", r.sd))
                    .unwrap_or_default();
                line.push(cell);
            }
        }
        wtr.write_record(&line)?;
    }
    wtr.flush()?;
    Ok(())
}
