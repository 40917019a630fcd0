//! Spectral-radius bounds and dense spectra of the discretisation matrix.

use std::fmt::Write as _;
use std::path::Path;

use faer::Mat;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::StencilOperator;
use crate::reference::{banded_factor, BandedMatrix};
use crate::sparse::CooMatrix;

/// Largest matrix the dense eigensolver accepts.
pub const DENSE_LIMIT: usize = 10_000;

/// Gershgorin bound on the spectral radius of the unscaled operator.
pub fn gershgorin_radius(op: &StencilOperator) -> f64 {
    op.absolute_row_sums().into_iter().fold(0.0, f64::max)
}

pub fn gershgorin_radius_coo(m: &CooMatrix) -> f64 {
    let mut sums = vec![0.0; m.n];
    for (r, _, v) in m.triplets() {
        sums[r] += v.abs();
    }
    sums.into_iter().fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub max_real: f64,
    pub max_abs_imag: f64,
}

/// JSON sidecar written next to a spectrum CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub max_real: f64,
    pub max_abs_imag: f64,
    pub n: usize,
}

impl Spectrum {
    pub fn from_eigenvalues(mut eigenvalues: Vec<Complex64>) -> Self {
        eigenvalues.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        let max_real = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let max_abs_imag = eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        Self {
            eigenvalues,
            max_real,
            max_abs_imag,
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn sum(&self) -> Complex64 {
        self.eigenvalues.iter().sum()
    }

    pub fn max_modulus(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Every non-real eigenvalue has its conjugate within `tol`.
    pub fn is_conjugate_symmetric(&self, tol: f64) -> bool {
        let mut sorted = self.eigenvalues.clone();
        sorted.sort_by(|a, b| a.re.total_cmp(&b.re));
        self.eigenvalues.iter().filter(|z| z.im.abs() > tol).all(|z| {
            let target = z.conj();
            let start = sorted.partition_point(|w| w.re < target.re - tol);
            sorted[start..]
                .iter()
                .take_while(|w| w.re <= target.re + tol)
                .any(|w| (w - target).norm() <= tol)
        })
    }

    pub fn summary(&self) -> SpectrumSummary {
        SpectrumSummary {
            max_real: self.max_real,
            max_abs_imag: self.max_abs_imag,
            n: self.len(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("re,im\n");
        for z in &self.eigenvalues {
            let _ = writeln!(s, "{},{}", z.re, z.im);
        }
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
        Ok(())
    }
}

/// Full spectrum of `scale * M` by dense QR iteration.
pub fn eigenvalues_dense(m: &CooMatrix, scale: f64) -> Result<Spectrum> {
    if m.n > DENSE_LIMIT {
        return Err(Error::TooLarge {
            n: m.n,
            limit: DENSE_LIMIT,
        });
    }
    if m.n == 0 {
        return Ok(Spectrum::from_eigenvalues(Vec::new()));
    }
    let mut dense = Mat::<f64>::zeros(m.n, m.n);
    for (r, c, v) in m.triplets() {
        dense[(r, c)] += scale * v;
    }
    let eig = dense.eigenvalues().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let values = eig.into_iter().map(|z| Complex64::new(z.re, z.im)).collect();
    Ok(Spectrum::from_eigenvalues(values))
}

fn residual(m: &CooMatrix, scale: f64, lambda: Complex64, v: &[Complex64]) -> f64 {
    let mut r: Vec<Complex64> = v.iter().map(|vi| -lambda * vi).collect();
    for (row, col, val) in m.triplets() {
        r[row] += scale * val * v[col];
    }
    r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `||A v - lambda v||_2 / ||A||_F` for `count` sampled eigenvalues of
/// `A = scale * M`, with `v` recovered by shifted inverse iteration.
pub fn eigen_residuals(m: &CooMatrix, scale: f64, spectrum: &Spectrum, count: usize, seed: u64) -> Result<Vec<f64>> {
    let n = m.n;
    let norm = scale.abs() * m.frobenius_norm();
    if n == 0 || norm == 0.0 {
        return Ok(vec![0.0; count.min(n)]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, spectrum.len(), count.min(spectrum.len()));
    let mut out = Vec::with_capacity(picks.len());
    for idx in picks.iter() {
        let lambda = spectrum.eigenvalues[idx];
        let mut best = f64::INFINITY;
        for attempt in 0..4 {
            let delta = norm * 1e-13 * 100f64.powi(attempt);
            let shift = lambda + Complex64::new(delta, delta);
            let a = BandedMatrix::<Complex64>::shifted(m, -shift, Complex64::new(scale, 0.0));
            let lu = match banded_factor(&a) {
                Ok(lu) => lu,
                Err(Error::Singular(_)) => continue,
                Err(e) => return Err(e),
            };
            let mut v: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            for _ in 0..8 {
                lu.solve_in_place(&mut v);
                let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if !(nv.is_finite() && nv > 0.0) {
                    break;
                }
                v.iter_mut().for_each(|z| *z /= nv);
                let res = residual(m, scale, lambda, &v) / norm;
                best = best.min(res);
                if best <= 1e-12 {
                    break;
                }
            }
            if best.is_finite() {
                break;
            }
        }
        out.push(best);
    }
    Ok(out)
}
