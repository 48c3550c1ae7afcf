//! Periodic 1D grid, spectral differentiation and quadrature.
//!
//! Every solver in the crate samples its fields on a [`Grid1D`]. Derivatives
//! are spectral: the field is transformed with an FFT, multiplied by
//! `(i k)^n`, and transformed back. For odd orders the Nyquist mode is
//! dropped so that real fields stay real.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Unnormalized forward DFT in place.
pub(crate) fn fft(data: &mut [Complex64]) {
    forward_plan(data.len()).process(data);
}

/// Inverse DFT in place, normalized by `1/N`.
pub(crate) fn ifft(data: &mut [Complex64]) {
    let n = data.len();
    inverse_plan(n).process(data);
    let scale = 1.0 / n as f64;
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// Standard DFT wavenumber ordering for `n` points on a period `length`.
pub(crate) fn dft_wavenumbers(n: usize, length: f64) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            2.0 * PI * m / length
        })
        .collect()
}

/// Uniform periodic grid `x_j = origin + j * dx`, `j in [0, N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    length: f64,
    points: usize,
    origin: f64,
}

impl Grid1D {
    /// Grid on `[-L/2, L/2)`.
    pub fn new(length: f64, points: usize) -> Result<Self> {
        Self::with_origin(length, points, -0.5 * length)
    }

    pub fn with_origin(length: f64, points: usize, origin: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        if points < 8 || points % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "point count must be even and at least 8, got {points}"
            )));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { length, points, origin })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.points as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.origin + j as f64 * self.spacing()
    }

    pub fn coordinates(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.x(j)).collect()
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        dft_wavenumbers(self.points, self.length)
    }

    /// Largest resolved wavenumber `pi / dx`.
    pub fn max_wavenumber(&self) -> f64 {
        PI / self.spacing()
    }

    /// Spectral multiplier `(i k_j)^order`; odd orders drop the Nyquist mode.
    pub(crate) fn derivative_multiplier(&self, order: u32) -> Vec<Complex64> {
        let n = self.points;
        self.wavenumbers()
            .into_iter()
            .enumerate()
            .map(|(j, k)| {
                if order % 2 == 1 && j == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, k).powu(order)
                }
            })
            .collect()
    }

    fn check_same(&self, other: &Grid1D) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

fn check_finite_real(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_finite_complex(values: &[Complex64]) -> Result<()> {
    match values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Applies several spectral derivative orders to one transform of `data`.
fn spectral_apply(grid: &Grid1D, data: &[Complex64], orders: &[u32]) -> Vec<Vec<Complex64>> {
    let mut hat = data.to_vec();
    fft(&mut hat);
    orders
        .iter()
        .map(|&order| {
            let mult = grid.derivative_multiplier(order);
            let mut out: Vec<Complex64> = hat.iter().zip(&mult).map(|(a, m)| a * m).collect();
            ifft(&mut out);
            out
        })
        .collect()
}

/// Real samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid1D,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: &Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::LengthMismatch { expected: grid.points(), actual: values.len() });
        }
        check_finite_real(&values)?;
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.coordinates().into_iter().map(f).collect())
    }

    pub fn constant(grid: &Grid1D, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.points()])
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.points()] }
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_parts(grid: &Grid1D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.points());
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Self::new(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn derivatives(&self, orders: &[u32]) -> Result<Vec<RealField>> {
        check_finite_real(&self.values)?;
        let data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Ok(spectral_apply(&self.grid, &data, orders)
            .into_iter()
            .map(|d| RealField::from_parts(&self.grid, d.into_iter().map(|c| c.re).collect()))
            .collect())
    }

    /// Spectral first derivative.
    pub fn gradient(&self) -> Result<RealField> {
        Ok(self.derivatives(&[1])?.remove(0))
    }

    /// Spectral second derivative.
    pub fn laplacian(&self) -> Result<RealField> {
        Ok(self.derivatives(&[2])?.remove(0))
    }

    /// Spectral derivatives of several orders sharing a single forward transform.
    pub fn spectral_derivatives(&self, orders: &[u32]) -> Result<Vec<RealField>> {
        self.derivatives(orders)
    }

    /// Mass, mean, variance and excess kurtosis of the field read as a
    /// (not necessarily normalized) distribution over the grid.
    pub fn moments(&self) -> Moments {
        let dx = self.grid.spacing();
        let xs = self.grid.coordinates();
        let mass: f64 = self.values.iter().sum::<f64>() * dx;
        let mean = self.values.iter().zip(&xs).map(|(r, x)| r * x).sum::<f64>() * dx / mass;
        let central = |p: i32| {
            self.values.iter().zip(&xs).map(|(r, x)| r * (x - mean).powi(p)).sum::<f64>() * dx / mass
        };
        let variance = central(2);
        let fourth = central(4);
        Moments { mass, mean, variance, excess_kurtosis: fourth / (variance * variance) - 3.0 }
    }
}

/// Low-order moments of a density on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mass: f64,
    pub mean: f64,
    pub variance: f64,
    pub excess_kurtosis: f64,
}

/// Complex samples on a grid; the state evolved by the Schrödinger-family solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid1D,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: &Grid1D, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::LengthMismatch { expected: grid.points(), actual: values.len() });
        }
        check_finite_complex(&values)?;
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, grid.coordinates().into_iter().map(f).collect())
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Self { grid: grid.clone(), values: vec![Complex64::new(0.0, 0.0); grid.points()] }
    }

    pub(crate) fn from_parts(grid: &Grid1D, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.points());
        Self { grid: grid.clone(), values }
    }

    /// Like [`ComplexField::new`] but reports a divergence at `step` instead
    /// of a generic non-finite sample.
    pub(crate) fn checked_step(grid: &Grid1D, values: Vec<Complex64>, step: usize) -> Result<Self> {
        check_finite_complex(&values).map_err(|_| Error::StepDiverged { step })?;
        Ok(Self::from_parts(grid, values))
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Result<Self> {
        Self::new(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(
        &self,
        other: &ComplexField,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Self::new(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self::from_parts(&self.grid, self.values.iter().map(|v| v * factor).collect())
    }

    pub fn modulus_squared(&self) -> RealField {
        RealField::from_parts(&self.grid, self.values.iter().map(|v| v.norm_sqr()).collect())
    }

    pub fn real_part(&self) -> RealField {
        RealField::from_parts(&self.grid, self.values.iter().map(|v| v.re).collect())
    }

    pub fn imag_part(&self) -> RealField {
        RealField::from_parts(&self.grid, self.values.iter().map(|v| v.im).collect())
    }

    /// Rescaled copy with unit `norm_squared`.
    pub fn normalized(&self) -> Result<Self> {
        let n2 = norm_squared(self);
        if !(n2 > 0.0) {
            return Err(Error::Domain("cannot normalize a zero field".into()));
        }
        Ok(self.scale(Complex64::new(1.0 / n2.sqrt(), 0.0)))
    }

    /// Inner product `<self|other> = sum conj(self) * other * dx`.
    pub fn inner(&self, other: &ComplexField) -> Result<Complex64> {
        self.grid.check_same(&other.grid)?;
        let dx = self.grid.spacing();
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum::<Complex64>() * dx)
    }

    fn derivatives(&self, orders: &[u32]) -> Result<Vec<ComplexField>> {
        check_finite_complex(&self.values)?;
        Ok(spectral_apply(&self.grid, &self.values, orders)
            .into_iter()
            .map(|d| ComplexField::from_parts(&self.grid, d))
            .collect())
    }

    pub fn gradient(&self) -> Result<ComplexField> {
        Ok(self.derivatives(&[1])?.remove(0))
    }

    pub fn laplacian(&self) -> Result<ComplexField> {
        Ok(self.derivatives(&[2])?.remove(0))
    }

    pub fn spectral_derivatives(&self, orders: &[u32]) -> Result<Vec<ComplexField>> {
        self.derivatives(orders)
    }

    /// Unnormalized DFT coefficients.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut hat = self.values.clone();
        fft(&mut hat);
        hat
    }
}

/// Periodic rectangle rule `sum f_j dx` (equal to the trapezoid rule here).
pub fn integrate(f: &RealField) -> f64 {
    f.values.iter().sum::<f64>() * f.grid.spacing()
}

/// `integral |psi|^2 dx`.
pub fn norm_squared(psi: &ComplexField) -> f64 {
    psi.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * psi.grid.spacing()
}

/// Physical constants shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub hbar: f64,
    pub mass: f64,
    /// Classical self-diffusion coefficient `D >= 0`.
    pub diffusion: f64,
    pub k_b: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, diffusion: 0.0, k_b: 1.0 }
    }
}

impl PhysicalParams {
    pub fn new(hbar: f64, mass: f64, diffusion: f64, k_b: f64) -> Result<Self> {
        let p = Self { hbar, mass, diffusion, k_b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.hbar) {
            return Err(Error::Domain(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !ok(self.mass) {
            return Err(Error::Domain(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.diffusion.is_finite() && self.diffusion >= 0.0) {
            return Err(Error::Domain(format!("diffusion must be >= 0, got {}", self.diffusion)));
        }
        if !ok(self.k_b) {
            return Err(Error::Domain(format!("k_B must be positive, got {}", self.k_b)));
        }
        Ok(())
    }

    pub fn with_diffusion(mut self, diffusion: f64) -> Self {
        self.diffusion = diffusion;
        self
    }

    /// Magnitude of the imaginary quantum diffusion constant, `hbar / 2m`.
    pub fn quantum_diffusion(&self) -> f64 {
        self.hbar / (2.0 * self.mass)
    }

    /// The square of the imaginary quantum diffusion constant, `-hbar^2 / 4m^2`.
    pub fn quantum_diffusion_squared(&self) -> f64 {
        -self.quantum_diffusion().powi(2)
    }

    /// Complex dilatational viscosity `D + i hbar / 2m`.
    pub fn dilatational_viscosity(&self) -> Complex64 {
        Complex64::new(self.diffusion, self.quantum_diffusion())
    }
}
