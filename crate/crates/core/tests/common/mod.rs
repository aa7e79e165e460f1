//! Reference implementations used as test oracles. They are written from the
//! definitions with plain loops and share no code with the library.

#![allow(dead_code)]

use ndarray::Array2;
use plbicluster::{DataMatrix, LabelAssignment, Rate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn xlogx(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

pub fn oracle_rate(rate: Rate, mu: f64) -> f64 {
    match rate {
        Rate::Bernoulli => xlogx(mu) + xlogx(1.0 - mu),
        Rate::Poisson => xlogx(mu) - mu,
        Rate::Gaussian => 0.5 * mu * mu,
    }
}

/// `sum_kl N_kl f(S_kl / N_kl)` by direct tallies over every entry.
pub fn oracle_criterion(x: &DataMatrix, rows: &[usize], cols: &[usize], k: usize, l: usize, rate: Rate) -> f64 {
    let mut sums = vec![vec![0.0; l]; k];
    let mut counts = vec![vec![0usize; l]; k];
    for (i, &g) in rows.iter().enumerate() {
        for (j, &h) in cols.iter().enumerate() {
            sums[g][h] += x.get(i, j);
            counts[g][h] += 1;
        }
    }
    let mut total = 0.0;
    for g in 0..k {
        for h in 0..l {
            let n = counts[g][h] as f64;
            total += n * oracle_rate(rate, sums[g][h] / n);
        }
    }
    total
}

/// `G(C, D)` with explicit index sums.
pub fn oracle_population(c: &Array2<f64>, d: &Array2<f64>, m0: &Array2<f64>, rate: Rate) -> f64 {
    let (ka, kk) = c.dim();
    let (la, ll) = d.dim();
    let mut total = 0.0;
    for k in 0..kk {
        for l in 0..ll {
            let mut mass_k = 0.0;
            for a in 0..ka {
                mass_k += c[[a, k]];
            }
            let mut mass_l = 0.0;
            for b in 0..la {
                mass_l += d[[b, l]];
            }
            let mut mixed = 0.0;
            for a in 0..ka {
                for b in 0..la {
                    mixed += c[[a, k]] * m0[[a, b]] * d[[b, l]];
                }
            }
            let w = mass_k * mass_l;
            total += w * oracle_rate(rate, mixed / w);
        }
    }
    total
}

/// Natural log of `2 K^(m+1) L^(n+1) exp(-T tau^2 eps^4 delta^2 / (256 c^2 sigma^2 min(K,L)^4))`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_log_bound(m: f64, n: f64, k: f64, l: f64, eps: f64, delta: f64, tau: f64, sigma: f64, c: f64, t: f64) -> f64 {
    let kl = if k < l { k } else { l };
    let expo = t * tau * tau * eps.powi(4) * delta * delta / (256.0 * c * c * sigma * sigma * kl.powi(4));
    2f64.ln() + (m + 1.0) * k.ln() + (n + 1.0) * l.ln() - expo
}

/// Uniform labels with every class used.
pub fn random_labels<R: Rng>(rng: &mut R, len: usize, classes: usize) -> Vec<usize> {
    assert!(len >= classes);
    loop {
        let v: Vec<usize> = (0..len).map(|_| rng.random_range(0..classes)).collect();
        if (0..classes).all(|c| v.contains(&c)) {
            return v;
        }
    }
}

pub fn random_assignment<R: Rng>(rng: &mut R, m: usize, n: usize, k: usize, l: usize) -> LabelAssignment {
    LabelAssignment::new(random_labels(rng, m, k), random_labels(rng, n, l), k, l).unwrap()
}

/// Random data valid for `rate`: 0/1 entries, counts, or reals.
pub fn random_data<R: Rng>(rng: &mut R, m: usize, n: usize, rate: Rate) -> DataMatrix {
    let vals: Vec<f64> = match rate {
        Rate::Bernoulli => {
            let p: f64 = rng.random_range(0.05..0.95);
            (0..m * n).map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect()
        }
        Rate::Poisson => {
            let lam: f64 = rng.random_range(0.2..5.0);
            let d = Poisson::new(lam).unwrap();
            (0..m * n).map(|_| d.sample(rng)).collect()
        }
        Rate::Gaussian => {
            let d = Normal::new(0.0, 3.0).unwrap();
            (0..m * n).map(|_| d.sample(rng)).collect()
        }
    };
    DataMatrix::from_shape_vec(m, n, vals).unwrap()
}

pub fn random_permutation<R: Rng>(rng: &mut R, len: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
