//! Implicit reference solvers: banded LU, Crank–Nicolson with Rannacher
//! start-up, and TR-BDF2.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::operator::StencilOperator;
use crate::sparse::CooMatrix;

/// Number of implicit-Euler half-step pairs before Crank–Nicolson takes over.
pub const RANNACHER_PAIRS: usize = 2;

/// TR-BDF2 splitting point.
pub const TRBDF2_GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;

/// Scalars the banded solver works over.
pub trait BandScalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn from_f64(x: f64) -> Self;
    fn modulus(self) -> f64;
}

impl BandScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
}

impl BandScalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
}

/// Square band matrix. Each row keeps `kl` extra slots on the right so an
/// LU factorisation with partial pivoting fits in place.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: BandScalar> BandedMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![T::zero(); n * width],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        for i in 0..n {
            m.set(i, i, T::from_f64(1.0));
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[self.slot(i, j)]
        } else {
            T::zero()
        }
    }

    /// Panics when `(i, j)` lies outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let k = self.slot(i, j);
        self.data[k] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: T) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let k = self.slot(i, j);
        self.data[k] = self.data[k] + value;
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku + 1).min(self.n);
                (lo..hi).fold(T::zero(), |acc, j| acc + self.data[self.slot(i, j)] * x[j])
            })
            .collect()
    }

    /// `alpha * I + beta * A` for a coordinate matrix `A`.
    pub fn shifted(coo: &CooMatrix, alpha: T, beta: T) -> Self {
        let (kl, ku) = coo.bandwidth();
        let mut m = Self::zeros(coo.n, kl, ku);
        for i in 0..coo.n {
            m.set(i, i, alpha);
        }
        for (r, c, v) in coo.triplets() {
            m.add(r, c, beta * T::from_f64(v));
        }
        m
    }

    fn max_modulus(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.modulus()))
    }
}

impl BandedMatrix<f64> {
    pub fn from_coo(coo: &CooMatrix) -> Self {
        Self::shifted(coo, 0.0, 1.0)
    }
}

/// LU factors with row interchanges, stored in band form.
#[derive(Debug, Clone)]
pub struct BandedLu<T> {
    lu: BandedMatrix<T>,
    pivots: Vec<usize>,
}

pub fn banded_factor<T: BandScalar>(mat: &BandedMatrix<T>) -> Result<BandedLu<T>> {
    let mut a = mat.clone();
    let n = a.n;
    let (kl, ku) = (a.kl, a.ku);
    let tiny = a.max_modulus() * f64::EPSILON;
    let mut pivots = Vec::with_capacity(n);
    for k in 0..n {
        let last_row = (k + kl + 1).min(n);
        let last_col = (k + kl + ku + 1).min(n);
        let mut p = k;
        let mut best = a.data[a.slot(k, k)].modulus();
        for r in k + 1..last_row {
            let m = a.data[a.slot(r, k)].modulus();
            if m > best {
                best = m;
                p = r;
            }
        }
        if !(best > tiny) {
            return Err(Error::Singular(k));
        }
        pivots.push(p);
        if p != k {
            for c in k..last_col {
                let (sk, sp) = (a.slot(k, c), a.slot(p, c));
                a.data.swap(sk, sp);
            }
        }
        let pivot = a.data[a.slot(k, k)];
        for r in k + 1..last_row {
            let srk = a.slot(r, k);
            let l = a.data[srk] / pivot;
            a.data[srk] = l;
            if l == T::zero() {
                continue;
            }
            for c in k + 1..last_col {
                let (src, dst) = (a.slot(k, c), a.slot(r, c));
                a.data[dst] = a.data[dst] - l * a.data[src];
            }
        }
    }
    Ok(BandedLu { lu: a, pivots })
}

impl<T: BandScalar> BandedLu<T> {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let a = &self.lu;
        let n = a.n;
        assert_eq!(b.len(), n, "right-hand side length");
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for r in k + 1..(k + a.kl + 1).min(n) {
                b[r] = b[r] - a.data[a.slot(r, k)] * bk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in k + 1..(k + a.kl + a.ku + 1).min(n) {
                acc = acc - a.data[a.slot(k, c)] * b[c];
            }
            b[k] = acc / a.data[a.slot(k, k)];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

fn check_run(initial: &Lattice, op: &StencilOperator, horizon: f64) -> Result<()> {
    initial.check_shape(op.shape())?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be > 0, got {horizon}")));
    }
    Ok(())
}

/// Crank–Nicolson with `pairs` implicit-Euler half-step pairs, on `y' = M y`.
///
/// Every step, start-up or not, solves with `I - (k/2) M`, so one
/// factorisation serves the whole run.
pub fn crank_nicolson_matrix_run(
    m: &CooMatrix,
    initial: &[f64],
    horizon: f64,
    l: usize,
    pairs: usize,
) -> Result<Vec<f64>> {
    if l < pairs || l == 0 {
        return Err(Error::InvalidInput(format!(
            "need at least {} steps, got {l}",
            pairs.max(1)
        )));
    }
    let k = horizon / l as f64;
    let lu = banded_factor(&BandedMatrix::shifted(m, 1.0, -0.5 * k))?;
    let mut y = initial.to_vec();
    for _ in 0..2 * pairs {
        lu.solve_in_place(&mut y);
    }
    for _ in pairs..l {
        let my = m.matvec(&y);
        for (yi, mi) in y.iter_mut().zip(&my) {
            *yi += 0.5 * k * mi;
        }
        lu.solve_in_place(&mut y);
    }
    Ok(y)
}

/// Crank–Nicolson/Rannacher reference run over `[0, horizon]` in `l` steps.
pub fn crank_nicolson_run(op: &StencilOperator, initial: &Lattice, horizon: f64, l: usize) -> Result<Lattice> {
    check_run(initial, op, horizon)?;
    if l < 3 {
        return Err(Error::InvalidInput(format!(
            "Crank-Nicolson reference needs l >= 3, got {l}"
        )));
    }
    let y = crank_nicolson_matrix_run(&op.to_sparse(), initial.values(), horizon, l, RANNACHER_PAIRS)?;
    Lattice::from_vec(initial.nx(), initial.nv(), y)
}

/// TR-BDF2 on `y' = M y`: trapezoidal stage to `t + gamma k`, then BDF2.
pub fn trbdf2_matrix_run(m: &CooMatrix, initial: &[f64], horizon: f64, l: usize) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(Error::InvalidInput("need at least one time step".into()));
    }
    let g = TRBDF2_GAMMA;
    let k = horizon / l as f64;
    let trap = banded_factor(&BandedMatrix::shifted(m, 1.0, -0.5 * g * k))?;
    let bdf = banded_factor(&BandedMatrix::shifted(m, 1.0, -(1.0 - g) / (2.0 - g) * k))?;
    // y_gamma / (g(2-g)) - (1-g)^2 / (g(2-g)) y_n, written so constants survive exactly
    let c_mid = 1.0 / (g * (2.0 - g));
    let mut y = initial.to_vec();
    let mut mid = vec![0.0; y.len()];
    for _ in 0..l {
        let my = m.matvec(&y);
        for ((s, yi), mi) in mid.iter_mut().zip(&y).zip(&my) {
            *s = yi + 0.5 * g * k * mi;
        }
        trap.solve_in_place(&mut mid);
        for (yi, s) in y.iter_mut().zip(&mid) {
            *yi += c_mid * (s - *yi);
        }
        bdf.solve_in_place(&mut y);
    }
    Ok(y)
}

/// TR-BDF2 run for a 1-D operator.
pub fn trbdf2_run(op: &StencilOperator, initial: &Lattice, horizon: f64, l: usize) -> Result<Lattice> {
    check_run(initial, op, horizon)?;
    if op.shape().1 != 1 {
        return Err(Error::InvalidInput(format!(
            "TR-BDF2 reference is 1-D only; operator has {} variance nodes",
            op.shape().1
        )));
    }
    let y = trbdf2_matrix_run(&op.to_sparse(), initial.values(), horizon, l)?;
    Lattice::from_vec(initial.nx(), 1, y)
}
