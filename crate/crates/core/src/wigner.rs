//! Wigner quasi-distribution on a periodic grid.
//!
//! Kernel convention: `f(x, p) = (1 / 2 pi hbar) int conj(psi(x - y/2)) psi(x + y/2) exp(-i p y / hbar) dy`,
//! so a plane wave `exp(i k x)` sits at `p = hbar k`.
//!
//! The separation `y` runs over whole-grid steps while the two arguments
//! `x +- y/2` land on half-grid points, so the state is first interpolated
//! spectrally onto a grid twice as fine. Separations are limited to
//! `|y| <= L/2`: beyond that the periodic wrap pairs points from
//! neighbouring images and would add a ghost copy of the distribution
//! halfway between them. States must therefore sit well inside the box.
//! The momentum axis is the DFT dual of the separation window, `N` points
//! spaced by `2 pi hbar / L`.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{fft, ifft, ComplexField, Grid1D, PhysicalParams, RealField};
use crate::madelung::MaskedField;
use crate::schrodinger::PotentialSpec;

/// Phase-space lattice: the spatial grid and a momentum axis of `N`
/// points, `p_l = (l - N/2) dp` with `dp = 2 pi hbar / L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceGrid {
    grid: Grid1D,
    hbar: f64,
}

impl PhaseSpaceGrid {
    pub fn new(grid: &Grid1D, hbar: f64) -> Self {
        PhaseSpaceGrid { grid: grid.clone(), hbar }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn momentum_points(&self) -> usize {
        self.grid.points()
    }

    pub fn momentum_spacing(&self) -> f64 {
        2.0 * PI * self.hbar / self.grid.length()
    }

    pub fn momentum(&self, l: usize) -> f64 {
        (l as f64 - (self.grid.points() / 2) as f64) * self.momentum_spacing()
    }

    pub fn momenta(&self) -> Vec<f64> {
        (0..self.momentum_points()).map(|l| self.momentum(l)).collect()
    }
}

/// Samples `f(x_j, p_l)`, stored momentum-major (`l * N + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct WignerFunction {
    phase: PhaseSpaceGrid,
    values: Vec<f64>,
}

impl WignerFunction {
    pub fn phase_space(&self) -> &PhaseSpaceGrid {
        &self.phase
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, j: usize, l: usize) -> f64 {
        self.values[l * self.phase.grid.points() + j]
    }

    /// `sum f dx dp`
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.phase.grid.spacing() * self.phase.momentum_spacing()
    }

    /// `sum f^2 dx dp`
    pub fn purity_integral(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.phase.grid.spacing() * self.phase.momentum_spacing()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Band-limited interpolation of `psi` onto `2N` points at half spacing.
fn refine(psi: &ComplexField) -> Vec<Complex64> {
    let n = psi.len();
    let mut hat = psi.values().to_vec();
    fft(&mut hat);
    let mut fine = vec![Complex64::new(0.0, 0.0); 2 * n];
    let half = n / 2;
    for m in 0..half {
        fine[m] = hat[m] * 2.0;
    }
    for m in half + 1..n {
        fine[m + n] = hat[m] * 2.0;
    }
    // split the Nyquist coefficient evenly between +N/2 and -N/2
    fine[half] = hat[half];
    fine[half + n] = hat[half];
    ifft(&mut fine);
    fine
}

/// Relative imaginary residue above which the transform is rejected.
pub const RESIDUE_LIMIT: f64 = 1e-10;

/// Discrete Wigner transform of `psi`.
pub fn wigner_transform(psi: &ComplexField, params: &PhysicalParams) -> Result<WignerFunction> {
    let grid = psi.grid();
    let n = grid.points();
    let half = n / 2;
    let fine = refine(psi);
    let two_n = 2 * n;
    let scale = grid.spacing() / (2.0 * PI * params.hbar);
    let mut values = vec![0.0; n * n];
    let mut max_re: f64 = 0.0;
    let mut max_im: f64 = 0.0;
    let mut row = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        let corr = |s: usize| {
            let a = (2 * j + two_n - s % two_n) % two_n;
            let b = (2 * j + s) % two_n;
            fine[a].conj() * fine[b]
        };
        for (s, c) in row.iter_mut().enumerate() {
            *c = if s < half {
                corr(s)
            } else if s == half {
                // y = +L/2 and y = -L/2 share this bin with half weight each
                0.5 * (corr(half) + corr(two_n - half))
            } else {
                corr(two_n - (n - s))
            };
        }
        fft(&mut row);
        for (q, c) in row.iter().enumerate() {
            // bin q holds momentum index q (q < N/2) or q - N
            let l = (q + half) % n;
            values[l * n + j] = scale * c.re;
            max_re = max_re.max(c.re.abs());
            max_im = max_im.max(c.im.abs());
        }
    }
    if max_re > 0.0 && max_im / max_re > RESIDUE_LIMIT {
        return Err(Error::TransformInconsistent { residue: max_im / max_re });
    }
    Ok(WignerFunction { phase: PhaseSpaceGrid::new(grid, params.hbar), values })
}

/// `rho(x) = m sum_l f(x, p_l) dp`.
pub fn marginal_position(f: &WignerFunction, params: &PhysicalParams) -> RealField {
    let n = f.phase.grid.points();
    let dp = f.phase.momentum_spacing();
    let mut rho = vec![0.0; n];
    for l in 0..f.phase.momentum_points() {
        for (j, r) in rho.iter_mut().enumerate() {
            *r += f.values[l * n + j];
        }
    }
    RealField::from_parts(&f.phase.grid, rho.into_iter().map(|r| params.mass * r * dp).collect())
}

/// Momentum density on the DFT momentum grid `p = hbar k`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumDensity {
    pub momenta: Vec<f64>,
    pub values: Vec<f64>,
}

impl MomentumDensity {
    pub fn spacing(&self) -> f64 {
        self.momenta[1] - self.momenta[0]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing()
    }
}

/// `g(p) = sum_j f(x_j, p) dx` on the momentum axis, ascending.
pub fn marginal_momentum(f: &WignerFunction) -> MomentumDensity {
    let n = f.phase.grid.points();
    let dx = f.phase.grid.spacing();
    MomentumDensity {
        momenta: f.phase.momenta(),
        values: (0..n).map(|l| f.values[l * n..(l + 1) * n].iter().sum::<f64>() * dx).collect(),
    }
}

/// `|phi(p)|^2` on the same grid as [`marginal_momentum`], with
/// `phi(p) = int psi(x) exp(-i p x / hbar) dx / sqrt(2 pi hbar)`.
pub fn momentum_density_of_state(psi: &ComplexField, params: &PhysicalParams) -> MomentumDensity {
    let grid = psi.grid();
    let n = grid.points();
    let hat = psi.spectrum();
    let dx = grid.spacing();
    let norm = dx * dx / (2.0 * PI * params.hbar);
    let dk = 2.0 * PI / grid.length();
    let mut momenta = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for c in 0..n {
        let m = c as i64 - (n / 2) as i64;
        let idx = m.rem_euclid(n as i64) as usize;
        momenta.push(params.hbar * dk * m as f64);
        values.push(norm * hat[idx].norm_sqr());
    }
    MomentumDensity { momenta, values }
}

/// `V = sum_l p_l f dp / rho`, with `rho` the mass density; points where
/// `rho <= floor` are masked.
pub fn current_velocity(f: &WignerFunction, rho: &RealField, floor: f64) -> Result<MaskedField> {
    let grid = &f.phase.grid;
    if rho.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let n = grid.points();
    let dp = f.phase.momentum_spacing();
    let mut flux = vec![0.0; n];
    // row 0 is the Nyquist row, shared by +-N/2 dp; it carries no net momentum
    for l in 1..f.phase.momentum_points() {
        let p = f.phase.momentum(l);
        for (j, v) in flux.iter_mut().enumerate() {
            *v += p * f.values[l * n + j];
        }
    }
    let mask: Vec<bool> = rho.values().iter().map(|&r| r > floor).collect();
    let values = (0..n).map(|j| if mask[j] { flux[j] * dp / rho.values()[j] } else { 0.0 }).collect();
    Ok(MaskedField { field: RealField::from_parts(grid, values), mask })
}

fn shift_rows(data: &mut [f64], rows: usize, len: usize, multiplier: impl Fn(usize, usize) -> Complex64) {
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for r in 0..rows {
        let row = &mut data[r * len..(r + 1) * len];
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = Complex64::new(*v, 0.0);
        }
        fft(&mut buf);
        for (q, b) in buf.iter_mut().enumerate() {
            *b *= multiplier(r, q);
        }
        ifft(&mut buf);
        for (v, b) in row.iter_mut().zip(&buf) {
            *v = b.re;
        }
    }
}

/// Wavenumber of DFT bin `q` for a periodic sequence of `len` samples
/// spanning `period`; the Nyquist bin returns `None`.
fn bin_wavenumber(q: usize, len: usize, period: f64) -> Option<f64> {
    let m = if q < len / 2 {
        q as f64
    } else if q == len / 2 {
        return None;
    } else {
        q as f64 - len as f64
    };
    Some(2.0 * PI * m / period)
}

/// Reusable Wigner-Liouville stepper for potentials at most quadratic.
///
/// Strang splitting: half free shear with half coordinate diffusion, a full
/// momentum kick, then the other half shear.
#[derive(Debug, Clone)]
pub struct LiouvilleStepper {
    phase: PhaseSpaceGrid,
    /// `dU/dx` at each grid point
    force: Vec<f64>,
    dt: f64,
    diffusion: f64,
    mass: f64,
}

impl LiouvilleStepper {
    pub fn new(
        phase: &PhaseSpaceGrid,
        potential: &PotentialSpec,
        diffusion: f64,
        params: &PhysicalParams,
        dt: f64,
    ) -> Result<Self> {
        match potential {
            PotentialSpec::Zero | PotentialSpec::Linear { .. } | PotentialSpec::Harmonic { .. } => {}
            PotentialSpec::Tabulated(_) => return Err(Error::UnsupportedPotential),
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if !(diffusion.is_finite() && diffusion >= 0.0) {
            return Err(Error::Domain(format!("diffusion must be non-negative, got {diffusion}")));
        }
        let force = potential.gradient(phase.grid(), params)?.into_values();
        Ok(LiouvilleStepper { phase: phase.clone(), force, dt, diffusion, mass: params.mass })
    }

    fn half_shear(&self, data: &mut [f64]) {
        let n = self.phase.grid.points();
        let len = self.phase.grid.length();
        let h = 0.5 * self.dt;
        let momenta = self.phase.momenta();
        let d = self.diffusion;
        let m = self.mass;
        shift_rows(data, self.phase.momentum_points(), n, |l, q| match bin_wavenumber(q, n, len) {
            Some(k) => Complex64::new(-d * k * k * h, -k * momenta[l] * h / m).exp(),
            None => {
                // Nyquist: keep the real, cosine part of the shift
                let k = PI * n as f64 / len;
                Complex64::new((-d * k * k * h).exp() * (k * momenta[l] * h / m).cos(), 0.0)
            }
        });
    }

    fn kick(&self, data: &mut [f64]) {
        let n = self.phase.grid.points();
        let np = self.phase.momentum_points();
        let period = np as f64 * self.phase.momentum_spacing();
        let mut col = vec![Complex64::new(0.0, 0.0); np];
        for j in 0..n {
            let s = self.force[j] * self.dt;
            if s == 0.0 {
                continue;
            }
            for l in 0..np {
                col[l] = Complex64::new(data[l * n + j], 0.0);
            }
            fft(&mut col);
            for (q, c) in col.iter_mut().enumerate() {
                // f(p) <- f(p + s)
                *c *= match bin_wavenumber(q, np, period) {
                    Some(eta) => Complex64::from_polar(1.0, eta * s),
                    None => Complex64::new((PI * np as f64 / period * s).cos(), 0.0),
                };
            }
            ifft(&mut col);
            for l in 0..np {
                data[l * n + j] = col[l].re;
            }
        }
    }

    pub fn apply(&self, f: &WignerFunction, step: usize) -> Result<WignerFunction> {
        if f.phase != self.phase {
            return Err(Error::GridMismatch);
        }
        let mut data = f.values.clone();
        self.half_shear(&mut data);
        self.kick(&mut data);
        self.half_shear(&mut data);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepDiverged { step });
        }
        Ok(WignerFunction { phase: self.phase.clone(), values: data })
    }
}

/// One Wigner-Liouville step with coordinate diffusion.
pub fn wigner_liouville_step(
    f: &WignerFunction,
    potential: &PotentialSpec,
    diffusion: f64,
    params: &PhysicalParams,
    dt: f64,
) -> Result<WignerFunction> {
    LiouvilleStepper::new(&f.phase, potential, diffusion, params, dt)?.apply(f, 0)
}

/// Potential recovered from a state and its time derivative.
#[derive(Debug, Clone)]
pub struct PotentialInference {
    /// `Re[(i hbar psi_t + (hbar^2/2m) lap psi) / psi]`
    pub potential: RealField,
    /// Imaginary part of the same quotient.
    pub imaginary: RealField,
    /// Largest `|imaginary|` where `|psi|^2 >= 1e-6 max |psi|^2`.
    pub residual: f64,
}

/// Reconstructs `U` assuming `psi` obeys a Schrodinger equation; a large
/// residual refutes that assumption.
pub fn infer_potential(
    psi: &ComplexField,
    psi_dot: &ComplexField,
    params: &PhysicalParams,
    floor: f64,
) -> Result<PotentialInference> {
    if psi.grid() != psi_dot.grid() {
        return Err(Error::GridMismatch);
    }
    for (index, v) in psi.values().iter().enumerate() {
        if !(v.norm() > floor) {
            return Err(Error::NodeEncountered { index, value: v.norm(), floor });
        }
    }
    let lap = psi.laplacian()?;
    let c = params.hbar * params.hbar / (2.0 * params.mass);
    let ih = Complex64::new(0.0, params.hbar);
    let q: Vec<Complex64> = (0..psi.len())
        .map(|j| (ih * psi_dot.values()[j] + c * lap.values()[j]) / psi.values()[j])
        .collect();
    let max_density = psi.values().iter().fold(0.0f64, |m, v| m.max(v.norm_sqr()));
    let residual = q
        .iter()
        .zip(psi.values())
        .filter(|(_, p)| p.norm_sqr() >= 1e-6 * max_density)
        .fold(0.0f64, |m, (z, _)| m.max(z.im.abs()));
    Ok(PotentialInference {
        potential: RealField::from_parts(psi.grid(), q.iter().map(|z| z.re).collect()),
        imaginary: RealField::from_parts(psi.grid(), q.iter().map(|z| z.im).collect()),
        residual,
    })
}
