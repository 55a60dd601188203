//! Significance tests used by the acceptance checks.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// One-sided two-proportion z-test of `H1: p1 > p2` with pooled variance.
/// Returns `(z, p_value)`.
pub fn two_proportion_z(k1: usize, n1: usize, k2: usize, n2: usize) -> Result<(f64, f64)> {
    if n1 == 0 || n2 == 0 || k1 > n1 || k2 > n2 {
        return Err(Error::InvalidInput(format!(
            "bad counts {k1}/{n1}, {k2}/{n2}"
        )));
    }
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return Ok((0.0, 1.0));
    }
    let z = (p1 - p2) / se;
    let n = Normal::standard();
    Ok((z, 1.0 - n.cdf(z)))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|a, b| x[*a].total_cmp(&x[*b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Spearman's rho with an exact one-sided permutation p-value for
/// `H1: rho > 0` (fraction of orderings of `y` with rho at least as large).
pub fn spearman_test(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::InvalidInput(
            "spearman test needs two equal-length samples of size >= 3".into(),
        ));
    }
    if x.len() > 9 {
        return Err(Error::InvalidInput(
            "exact permutation test limited to 9 points".into(),
        ));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let rho = pearson(&rx, &ry);
    let perms = permutations(y.len());
    let hits = perms
        .iter()
        .filter(|p| {
            let permuted: Vec<f64> = p.iter().map(|i| ry[*i]).collect();
            pearson(&rx, &permuted) >= rho - 1e-12
        })
        .count();
    Ok((rho, hits as f64 / perms.len() as f64))
}
