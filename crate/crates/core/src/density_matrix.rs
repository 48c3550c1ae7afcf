//! Density matrices in a finite energy basis: von Neumann evolution, ergodic
//! time averages and the anticommutator master equation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::PhysicalParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Sorted energy eigenvalues with a degeneracy tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySpectrum {
    energies: Vec<f64>,
    tolerance: f64,
}

impl EnergySpectrum {
    /// Tolerance defaults to `1e-9` times the spectral range (or times the
    /// largest magnitude, or 1, when the range vanishes).
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::DimensionMismatch("empty spectrum".into()));
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return Err(Error::Domain("energies must be finite".into()));
        }
        if energies.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("energies must be sorted ascending".into()));
        }
        let range = energies[energies.len() - 1] - energies[0];
        let scale = if range > 0.0 {
            range
        } else {
            energies.iter().fold(1.0f64, |m, e| m.max(e.abs()))
        };
        Ok(EnergySpectrum { energies, tolerance: 1e-9 * scale })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    /// `E_n = hbar omega (n + 1/2)`, `n = 0..dim`.
    pub fn harmonic_oscillator(dim: usize, hbar_omega: f64) -> Result<Self> {
        EnergySpectrum::new((0..dim).map(|n| hbar_omega * (n as f64 + 0.5)).collect())
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn degenerate(&self, k: usize, n: usize) -> bool {
        (self.energies[k] - self.energies[n]).abs() < self.tolerance
    }

    /// Index groups of mutually degenerate levels.
    pub fn degeneracy_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for k in 0..self.dim() {
            match groups.last_mut() {
                Some(g) if self.degenerate(g[0], k) => g.push(k),
                _ => groups.push(vec![k]),
            }
        }
        groups
    }

    /// Smallest nonzero Bohr frequency gap `|E_k - E_n| / hbar`.
    pub fn smallest_gap(&self, hbar: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for k in 0..self.dim() {
            for n in 0..k {
                if !self.degenerate(k, n) {
                    let w = (self.energies[k] - self.energies[n]).abs() / hbar;
                    best = Some(best.map_or(w, |b: f64| b.min(w)));
                }
            }
        }
        best
    }

    pub fn hamiltonian(&self) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.dim(),
            self.energies.iter().map(|&e| Complex64::new(e, 0.0)),
        ))
    }
}

/// Largest `|A - A^dagger|` element.
pub fn hermiticity_deviation(m: &DMatrix<Complex64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Hermitian, positive semidefinite matrix; unit trace at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<Complex64>,
}

impl DensityMatrix {
    /// Checks Hermiticity (1e-12), unit trace (1e-12) and positivity
    /// (smallest eigenvalue above -1e-10).
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!("{}x{} is not a square matrix", matrix.nrows(), matrix.ncols())));
        }
        let deviation = hermiticity_deviation(&matrix);
        if deviation > 1e-12 {
            return Err(Error::NotHermitian { deviation });
        }
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("trace {trace} is not 1")));
        }
        let min = hermitian_eigenvalues(&matrix)[0];
        if min < -1e-10 {
            return Err(Error::Domain(format!("matrix is not positive semidefinite (eigenvalue {min:e})")));
        }
        Ok(DensityMatrix { matrix })
    }

    /// Wraps an evolved matrix without re-checking trace and positivity.
    pub fn from_evolved(matrix: DMatrix<Complex64>) -> Self {
        DensityMatrix { matrix }
    }

    /// `|psi><psi|` for a normalized amplitude vector.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if !(norm > 0.0) {
            return Err(Error::Domain("zero state vector".into()));
        }
        let s = 1.0 / norm.sqrt();
        let v = DVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|a| a * s));
        DensityMatrix::new(&v * v.adjoint())
    }

    pub fn diagonal(probabilities: &[f64]) -> Result<Self> {
        DensityMatrix::new(DMatrix::from_diagonal(&DVector::from_iterator(
            probabilities.len(),
            probabilities.iter().map(|&p| Complex64::new(p, 0.0)),
        )))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn get(&self, k: usize, n: usize) -> Complex64 {
        self.matrix[(k, n)]
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        hermiticity_deviation(&self.matrix)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix)[0]
    }

    /// Frobenius norm of the off-diagonal part.
    pub fn offdiag_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                if i != j {
                    s += self.matrix[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    }

    /// Largest elementwise difference.
    pub fn max_diff(&self, other: &DensityMatrix) -> f64 {
        (&self.matrix - &other.matrix).iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// `tr(A rho)`.
    pub fn expectation(&self, a: &DMatrix<Complex64>) -> Complex64 {
        (a * &self.matrix).trace()
    }
}

fn check_dim(rho: &DensityMatrix, spectrum: &EnergySpectrum) -> Result<()> {
    if rho.dim() != spectrum.dim() {
        return Err(Error::DimensionMismatch(format!(
            "density matrix is {0}x{0}, spectrum has {1} levels",
            rho.dim(),
            spectrum.dim()
        )));
    }
    Ok(())
}

/// `rho_kn(t) = exp(-i (E_k - E_n) t / hbar) rho_kn(0)`.
pub fn evolve_energy_basis(
    rho0: &DensityMatrix,
    spectrum: &EnergySpectrum,
    t: f64,
    params: &PhysicalParams,
) -> Result<DensityMatrix> {
    check_dim(rho0, spectrum)?;
    let e = spectrum.energies();
    let m = DMatrix::from_fn(rho0.dim(), rho0.dim(), |k, n| {
        rho0.matrix[(k, n)] * Complex64::from_polar(1.0, -(e[k] - e[n]) * t / params.hbar)
    });
    Ok(DensityMatrix::from_evolved(m))
}

/// `-i [H, rho] / hbar`.
pub fn von_neumann_rate(rho: &DensityMatrix, h: &DMatrix<Complex64>, params: &PhysicalParams) -> DMatrix<Complex64> {
    (h * &rho.matrix - &rho.matrix * h) * (-I / params.hbar)
}

/// `(1/tau) int_0^tau rho(t) dt`, integrated in closed form per element.
pub fn time_average(
    rho0: &DensityMatrix,
    spectrum: &EnergySpectrum,
    tau: f64,
    params: &PhysicalParams,
) -> Result<DensityMatrix> {
    check_dim(rho0, spectrum)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain(format!("averaging time must be positive, got {tau}")));
    }
    let e = spectrum.energies();
    let m = DMatrix::from_fn(rho0.dim(), rho0.dim(), |k, n| {
        let phase = (e[k] - e[n]) * tau / params.hbar;
        let factor = if phase.abs() < 1e-8 {
            // series of (exp(-i x) - 1) / (-i x)
            Complex64::new(1.0 - phase * phase / 6.0, -phase / 2.0)
        } else {
            (Complex64::from_polar(1.0, -phase) - 1.0) / (-I * phase)
        };
        rho0.matrix[(k, n)] * factor
    });
    Ok(DensityMatrix::from_evolved(m))
}

/// Trapezoid estimate of the same time average from `samples` intervals.
pub fn time_average_quadrature(
    rho0: &DensityMatrix,
    spectrum: &EnergySpectrum,
    tau: f64,
    samples: usize,
    params: &PhysicalParams,
) -> Result<DensityMatrix> {
    check_dim(rho0, spectrum)?;
    if !(tau.is_finite() && tau > 0.0) || samples == 0 {
        return Err(Error::Domain("quadrature needs tau > 0 and at least one interval".into()));
    }
    let h = tau / samples as f64;
    let mut acc = DMatrix::<Complex64>::zeros(rho0.dim(), rho0.dim());
    for i in 0..=samples {
        let w = if i == 0 || i == samples { 0.5 } else { 1.0 };
        let r = evolve_energy_basis(rho0, spectrum, i as f64 * h, params)?;
        acc += r.matrix * Complex64::new(w * h / tau, 0.0);
    }
    Ok(DensityMatrix::from_evolved(acc))
}

/// Keeps `rho_kn` only where `E_k` and `E_n` are degenerate.
pub fn ergodic_limit(rho0: &DensityMatrix, spectrum: &EnergySpectrum) -> Result<DensityMatrix> {
    check_dim(rho0, spectrum)?;
    let m = DMatrix::from_fn(rho0.dim(), rho0.dim(), |k, n| {
        if spectrum.degenerate(k, n) {
            rho0.matrix[(k, n)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(DensityMatrix::from_evolved(m))
}

/// `H` and `p^2` in the harmonic-oscillator eigenbasis truncated to `dim`
/// levels.
#[derive(Debug, Clone)]
pub struct OscillatorBasis {
    pub hamiltonian: DMatrix<Complex64>,
    pub momentum_squared: DMatrix<Complex64>,
    pub spectrum: EnergySpectrum,
}

impl OscillatorBasis {
    /// `<n|p^2|n> = (m hbar omega / 2)(2n + 1)`,
    /// `<n+2|p^2|n> = -(m hbar omega / 2) sqrt((n+1)(n+2))`.
    pub fn new(dim: usize, omega: f64, params: &PhysicalParams) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("oscillator basis needs at least one level".into()));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::Domain(format!("omega must be positive, got {omega}")));
        }
        let spectrum = EnergySpectrum::harmonic_oscillator(dim, params.hbar * omega)?;
        let c = 0.5 * params.mass * params.hbar * omega;
        let p2 = DMatrix::from_fn(dim, dim, |i, j| {
            let (lo, hi) = (i.min(j), i.max(j));
            let v = if i == j {
                c * (2 * i + 1) as f64
            } else if hi - lo == 2 {
                -c * (((lo + 1) * (lo + 2)) as f64).sqrt()
            } else {
                0.0
            };
            Complex64::new(v, 0.0)
        });
        Ok(OscillatorBasis { hamiltonian: spectrum.hamiltonian(), momentum_squared: p2, spectrum })
    }
}

fn master_rate(
    rho: &DMatrix<Complex64>,
    h: &DMatrix<Complex64>,
    p2: &DMatrix<Complex64>,
    diffusion: f64,
    hbar: f64,
) -> DMatrix<Complex64> {
    let comm = h * rho - rho * h;
    let anti = p2 * rho + rho * p2;
    comm * (-I / hbar) - anti * Complex64::new(diffusion / (hbar * hbar), 0.0)
}

/// Hermiticity tolerance for the generator inputs, relative to their size.
const GENERATOR_TOLERANCE: f64 = 1e-12;

fn check_generator(m: &DMatrix<Complex64>, dim: usize, name: &str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch(format!("{name} is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols())));
    }
    let scale = m.iter().fold(1.0f64, |a, z| a.max(z.norm()));
    let deviation = hermiticity_deviation(m);
    if deviation > GENERATOR_TOLERANCE * scale {
        return Err(Error::NotHermitian { deviation });
    }
    Ok(())
}

/// RK4 step of `rho_t = -i [H, rho] / hbar - D {p^2, rho} / hbar^2`.
///
/// Only the anticommutator part of a Lindblad generator is present, so the
/// trace decays: `d tr(rho)/dt = -2 D tr(p^2 rho) / hbar^2`.
pub fn master_equation_step(
    rho: &DensityMatrix,
    h: &DMatrix<Complex64>,
    p2: &DMatrix<Complex64>,
    diffusion: f64,
    dt: f64,
    params: &PhysicalParams,
) -> Result<DensityMatrix> {
    let dim = rho.dim();
    check_generator(h, dim, "H")?;
    check_generator(p2, dim, "p^2")?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    let hbar = params.hbar;
    let r0 = &rho.matrix;
    let half = Complex64::new(0.5 * dt, 0.0);
    let full = Complex64::new(dt, 0.0);
    let k1 = master_rate(r0, h, p2, diffusion, hbar);
    let k2 = master_rate(&(r0 + &k1 * half), h, p2, diffusion, hbar);
    let k3 = master_rate(&(r0 + &k2 * half), h, p2, diffusion, hbar);
    let k4 = master_rate(&(r0 + &k3 * full), h, p2, diffusion, hbar);
    let next = r0 + (k1 + (k2 + k3) * Complex64::new(2.0, 0.0) + k4) * Complex64::new(dt / 6.0, 0.0);
    if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::StepDiverged { step: 0 });
    }
    Ok(DensityMatrix::from_evolved(next))
}

/// Analytic trace decay rate `-2 D tr(p^2 rho) / hbar^2`.
pub fn trace_decay_rate(rho: &DensityMatrix, p2: &DMatrix<Complex64>, diffusion: f64, params: &PhysicalParams) -> f64 {
    -2.0 * diffusion * rho.expectation(p2).re / (params.hbar * params.hbar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn p() -> PhysicalParams {
        PhysicalParams::default()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn mixed_state(dim: usize, seed: u64) -> DensityMatrix {
        // deterministic pseudo-random Hermitian PSD matrix A A^dagger / tr
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = DMatrix::from_fn(dim, dim, |_, _| c(next(), next()));
        let m = &a * a.adjoint();
        let tr = m.trace();
        DensityMatrix::new(m / tr).unwrap()
    }

    #[test]
    fn construction_checks() {
        assert!(DensityMatrix::diagonal(&[0.5, 0.5]).is_ok());
        assert!(DensityMatrix::diagonal(&[0.5, 0.6]).is_err());
        assert!(DensityMatrix::diagonal(&[1.5, -0.5]).is_err());
        let nh = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.5, 0.0)]);
        assert!(matches!(DensityMatrix::new(nh), Err(Error::NotHermitian { .. })));
        assert!(EnergySpectrum::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn diagonal_states_are_stationary() {
        let spec = EnergySpectrum::new(vec![0.0, 0.7, 2.3]).unwrap();
        let rho = DensityMatrix::diagonal(&[0.2, 0.3, 0.5]).unwrap();
        for t in [0.0, 1.0, 17.3] {
            assert_eq!(evolve_energy_basis(&rho, &spec, t, &p()).unwrap(), rho);
        }
        assert!(time_average(&rho, &spec, 5.0, &p()).unwrap().max_diff(&rho) < 1e-15);
    }

    #[test]
    fn two_level_dephasing() {
        let spec = EnergySpectrum::new(vec![0.0, 1.0]).unwrap();
        let r = c(0.3, 0.2);
        let rho = DensityMatrix::new(DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), r, r.conj(), c(0.5, 0.0)])).unwrap();
        for t in [0.5, 1.0, 3.0] {
            let e = evolve_energy_basis(&rho, &spec, t, &p()).unwrap();
            assert!((e.get(0, 1).norm() - r.norm()).abs() < 1e-15);
            // E_0 - E_1 = -1: phase advances by +t
            let dphi = (e.get(0, 1) / r).arg();
            assert!((dphi - t).abs() < 1e-12);
        }
    }

    #[test]
    fn von_neumann_residual_is_second_order() {
        let spec = EnergySpectrum::new(vec![0.0, 0.4, 1.1, 2.5]).unwrap();
        let rho = mixed_state(4, 7);
        let params = p();
        let t = 0.8;
        let h = spec.hamiltonian();
        let exact = von_neumann_rate(&evolve_energy_basis(&rho, &spec, t, &params).unwrap(), &h, &params);
        let err = |d: f64| {
            let a = evolve_energy_basis(&rho, &spec, t + d, &params).unwrap();
            let b = evolve_energy_basis(&rho, &spec, t - d, &params).unwrap();
            let fd = (&a.matrix - &b.matrix) / c(2.0 * d, 0.0);
            (fd - &exact).iter().fold(0.0f64, |m, z| m.max(z.norm()))
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((3.8..4.2).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn time_average_of_two_level_system() {
        let params = p();
        let gap = 1.3;
        let spec = EnergySpectrum::new(vec![0.0, gap]).unwrap();
        let r = c(0.4, 0.0);
        let rho = DensityMatrix::new(DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), r, r, c(0.5, 0.0)])).unwrap();
        for tau in [0.3, 2.0, 9.0] {
            let avg = time_average(&rho, &spec, tau, &params).unwrap();
            let x = gap * tau / params.hbar;
            let expect = (x / 2.0).sin().abs() * 2.0 / x * r.norm();
            assert!((avg.get(0, 1).norm() - expect).abs() < 1e-14);
        }
        let tau = 2.0 * PI * params.hbar / gap;
        assert!(time_average(&rho, &spec, tau, &params).unwrap().get(0, 1).norm() < 1e-15);
    }

    #[test]
    fn time_average_matches_quadrature() {
        let params = p();
        let spec = EnergySpectrum::new(vec![0.0, 0.37, 1.2, 2.9]).unwrap();
        let rho = mixed_state(4, 3);
        let a = time_average(&rho, &spec, 6.0, &params).unwrap();
        let b = time_average_quadrature(&rho, &spec, 6.0, 10_000, &params).unwrap();
        assert!(a.max_diff(&b) < 1e-8);
        assert!(time_average(&rho, &spec, 0.0, &params).is_err());
    }

    #[test]
    fn ergodic_limit_projects_onto_degenerate_blocks() {
        let spec = EnergySpectrum::new(vec![0.0, 0.5, 1.7, 3.0]).unwrap();
        let rho = mixed_state(4, 11);
        let lim = ergodic_limit(&rho, &spec).unwrap();
        assert!(lim.offdiag_norm() == 0.0);
        assert!((lim.trace() - rho.trace()).abs() < 1e-15);

        let mut amps = vec![c(0.0, 0.0); 4];
        amps[2] = c(1.0, 0.0);
        let micro = DensityMatrix::pure(&amps).unwrap();
        assert_eq!(ergodic_limit(&micro, &spec).unwrap(), micro);

        let deg = EnergySpectrum::new(vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(deg.degeneracy_groups(), vec![vec![0], vec![1, 2], vec![3]]);
        let lim = ergodic_limit(&rho, &deg).unwrap();
        for k in 0..4 {
            for n in 0..4 {
                let keep = k == n || (k.min(n) == 1 && k.max(n) == 2);
                assert_eq!(lim.get(k, n) == rho.get(k, n), keep || rho.get(k, n) == c(0.0, 0.0));
                if !keep {
                    assert_eq!(lim.get(k, n), c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn average_approaches_ergodic_limit_as_one_over_tau() {
        let params = p();
        let spec = EnergySpectrum::new(vec![0.0, 0.8, 1.9, 3.3]).unwrap();
        let rho = mixed_state(4, 5);
        let lim = ergodic_limit(&rho, &spec).unwrap();
        let gap = spec.smallest_gap(params.hbar).unwrap();
        let bound = 2.0 * rho.offdiag_norm() / gap;
        for tau in [10.0, 100.0, 1000.0] {
            let avg = time_average(&rho, &spec, tau, &params).unwrap();
            assert!(avg.offdiag_norm() <= bound / tau);
            assert!(avg.max_diff(&lim) <= bound / tau);
        }
    }

    #[test]
    fn commensurate_spectrum_recurs() {
        let params = p();
        let spec = EnergySpectrum::new(vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        let rho = mixed_state(4, 9);
        let a = evolve_energy_basis(&rho, &spec, 0.37, &params).unwrap();
        let b = evolve_energy_basis(&rho, &spec, 0.37 + 2.0 * PI * params.hbar, &params).unwrap();
        assert!(a.max_diff(&b) < 1e-12);
    }

    #[test]
    fn oscillator_matrix_elements() {
        let params = PhysicalParams { hbar: 1.0, mass: 2.0, ..p() };
        let b = OscillatorBasis::new(6, 0.5, &params).unwrap();
        let cst = 0.5 * params.mass * params.hbar * 0.5;
        assert!((b.momentum_squared[(0, 0)].re - cst).abs() < 1e-15);
        assert!((b.momentum_squared[(2, 0)].re + cst * 2f64.sqrt()).abs() < 1e-15);
        assert!((b.momentum_squared[(3, 1)].re + cst * 6f64.sqrt()).abs() < 1e-15);
        assert!(b.momentum_squared[(1, 0)].norm() == 0.0);
        assert!((b.hamiltonian[(3, 3)].re - 3.5 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn master_equation_without_diffusion_is_unitary() {
        let params = p();
        let spec = EnergySpectrum::new(vec![0.0, 0.6, 1.5, 2.2]).unwrap();
        let h = spec.hamiltonian();
        let p2 = OscillatorBasis::new(4, 1.0, &params).unwrap().momentum_squared;
        let rho0 = mixed_state(4, 13);
        let dt = 0.01;
        let mut rho = rho0.clone();
        for _ in 0..100 {
            rho = master_equation_step(&rho, &h, &p2, 0.0, dt, &params).unwrap();
        }
        let exact = evolve_energy_basis(&rho0, &spec, 1.0, &params).unwrap();
        assert!(rho.max_diff(&exact) < 1e-8);
    }

    #[test]
    fn master_equation_in_rotated_basis() {
        // H not diagonal: compare after rotating into its eigenbasis
        let params = p();
        let h = DMatrix::from_row_slice(
            3,
            3,
            &[c(1.0, 0.0), c(0.2, 0.1), c(0.0, 0.0), c(0.2, -0.1), c(0.5, 0.0), c(0.3, 0.0), c(0.0, 0.0), c(0.3, 0.0), c(2.0, 0.0)],
        );
        let eig = h.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let u = DMatrix::from_fn(3, 3, |i, j| eig.eigenvectors[(i, order[j])]);
        let spec = EnergySpectrum::new(order.iter().map(|&k| eig.eigenvalues[k]).collect()).unwrap();
        let rho0 = mixed_state(3, 21);
        let zero = DMatrix::<Complex64>::zeros(3, 3);
        let mut rho = rho0.clone();
        for _ in 0..200 {
            rho = master_equation_step(&rho, &h, &zero, 0.0, 0.01, &params).unwrap();
        }
        let in_eig = DensityMatrix::from_evolved(u.adjoint() * rho0.matrix() * &u);
        let exact = evolve_energy_basis(&in_eig, &spec, 2.0, &params).unwrap();
        let back = DensityMatrix::from_evolved(&u * exact.matrix() * u.adjoint());
        assert!(rho.max_diff(&back) < 1e-8 * 2.0);
    }

    #[test]
    fn ground_state_trace_decay() {
        let params = PhysicalParams { hbar: 1.0, mass: 1.3, ..p() };
        let omega = 0.9;
        let d = 0.01;
        let b = OscillatorBasis::new(32, omega, &params).unwrap();
        let mut amps = vec![c(0.0, 0.0); 32];
        amps[0] = c(1.0, 0.0);
        let rho = DensityMatrix::pure(&amps).unwrap();
        let rate = trace_decay_rate(&rho, &b.momentum_squared, d, &params);
        assert!((rate + d * params.mass * omega / params.hbar).abs() < 1e-12);
        let dt = 1e-4;
        let next = master_equation_step(&rho, &b.hamiltonian, &b.momentum_squared, d, dt, &params).unwrap();
        let measured = (next.trace() - rho.trace()) / dt;
        assert!((measured - rate).abs() < 1e-6, "{measured} vs {rate}");
    }

    #[test]
    fn master_equation_keeps_hermiticity_and_positivity() {
        let params = p();
        let b = OscillatorBasis::new(12, 1.0, &params).unwrap();
        let mut amps = vec![c(0.0, 0.0); 12];
        amps[0] = c(0.8, 0.0);
        amps[1] = c(0.0, 0.6);
        let mut rho = DensityMatrix::pure(&amps).unwrap();
        let mut last = rho.trace();
        for _ in 0..1000 {
            rho = master_equation_step(&rho, &b.hamiltonian, &b.momentum_squared, 0.02, 0.01, &params).unwrap();
            assert!(rho.trace() < last);
            last = rho.trace();
        }
        assert!(rho.hermiticity_deviation() < 1e-10);
        assert!(rho.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn master_equation_rejects_bad_generators() {
        let params = p();
        let rho = mixed_state(3, 1);
        let h = DMatrix::from_fn(3, 3, |i, j| c((i * 3 + j) as f64, 0.0));
        let ok = DMatrix::<Complex64>::identity(3, 3);
        assert!(matches!(master_equation_step(&rho, &h, &ok, 0.1, 0.01, &params), Err(Error::NotHermitian { .. })));
        let small = DMatrix::<Complex64>::identity(2, 2);
        assert!(matches!(master_equation_step(&rho, &ok, &small, 0.1, 0.01, &params), Err(Error::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn evolution_preserves_trace_and_spectrum(seed in 0u64..10_000, t in -20.0f64..20.0) {
            let spec = EnergySpectrum::new(vec![-1.0, 0.3, 0.9, 4.0]).unwrap();
            let rho = mixed_state(4, seed);
            let e = evolve_energy_basis(&rho, &spec, t, &p()).unwrap();
            prop_assert!((e.trace() - 1.0).abs() < 1e-12);
            prop_assert!(e.hermiticity_deviation() < 1e-14);
            let a = hermitian_eigenvalues(rho.matrix());
            let b = hermitian_eigenvalues(e.matrix());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
