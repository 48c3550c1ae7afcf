//! Overdamped quantum density flow with a teleportation source term, and the
//! dispersion laws obeyed by its Gaussian solutions.

use crate::error::{Error, Result};
use crate::grid::{integrate, Grid1D, PhysicalParams, RealField};
use crate::madelung::DEFAULT_FLOOR;
use crate::numerics::bracket_and_bisect;
use crate::schrodinger::PotentialSpec;

/// Relative tolerance of the dispersion-law roots.
pub const ROOT_TOLERANCE: f64 = 1e-12;

/// Densities below `-NEGATIVE_TOLERANCE * max(rho)` abort a step.
pub const NEGATIVE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeleportationParams {
    /// Friction coefficient `b`.
    pub friction: f64,
    /// Teleportation wavenumber `kappa`.
    pub kappa: f64,
    /// `E` in the zero-temperature source, the free energy `F` in the thermal one.
    pub energy: f64,
    pub temperature: f64,
    pub mean_free_path: Option<f64>,
}

impl TeleportationParams {
    pub fn new(friction: f64, kappa: f64, energy: f64, temperature: f64) -> Result<Self> {
        let p = Self { friction, kappa, energy, temperature, mean_free_path: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_mean_free_path(mut self, lambda: f64) -> Result<Self> {
        self.mean_free_path = Some(lambda);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.friction.is_finite() && self.friction > 0.0) {
            return Err(Error::Domain(format!("friction must be positive, got {}", self.friction)));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::Domain(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if !self.energy.is_finite() {
            return Err(Error::Domain("energy must be finite".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Domain(format!("temperature must be non-negative, got {}", self.temperature)));
        }
        if let Some(l) = self.mean_free_path {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Domain(format!("mean free path must be positive, got {l}")));
            }
        }
        self.validate_teleportation_length()
    }

    /// Requires `kappa * lambda < 1` when a mean free path is set.
    pub fn validate_teleportation_length(&self) -> Result<()> {
        match self.mean_free_path {
            Some(l) if self.kappa * l >= 1.0 => Err(Error::Domain(format!(
                "teleportation length 1/kappa must exceed the mean free path: kappa*lambda = {} >= 1",
                self.kappa * l
            ))),
            _ => Ok(()),
        }
    }

    /// `hbar^2 kappa^2 / (8 m k_B)`
    pub fn teleportation_temperature(&self, phys: &PhysicalParams) -> f64 {
        phys.hbar * phys.hbar * self.kappa * self.kappa / (8.0 * phys.mass * phys.k_b)
    }

    /// `k_B T_T / b`
    pub fn teleportation_diffusion(&self, phys: &PhysicalParams) -> f64 {
        phys.k_b * self.teleportation_temperature(phys) / self.friction
    }

    /// `hbar kappa / 2`
    pub fn transferred_momentum(&self, phys: &PhysicalParams) -> f64 {
        0.5 * phys.hbar * self.kappa
    }

    /// `hbar / (2 sqrt(m k_B T))`; infinite at `T = 0`.
    pub fn thermal_wavelength(&self, phys: &PhysicalParams) -> f64 {
        phys.hbar / (2.0 * (phys.mass * phys.k_b * self.temperature).sqrt())
    }

    /// `k_B T / b`
    pub fn einstein_diffusion(&self, phys: &PhysicalParams) -> f64 {
        phys.k_b * self.temperature / self.friction
    }

    /// `kappa^2 lambda_T^2 = hbar^2 kappa^2 / (4 m k_B T)`
    pub fn well_posedness_product(&self, phys: &PhysicalParams) -> f64 {
        phys.hbar * phys.hbar * self.kappa * self.kappa / (4.0 * phys.mass * phys.k_b * self.temperature)
    }
}

/// Friction `hbar / lambda^2` of a quantum particle in a gas with mean free path `lambda`.
pub fn friction_from_mean_free_path(hbar: f64, lambda: f64) -> f64 {
    hbar / (lambda * lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoluchowskiState {
    pub rho: RealField,
    pub mass: f64,
    pub time: f64,
}

impl SmoluchowskiState {
    pub fn new(rho: RealField) -> Result<Self> {
        check_density(&rho)?;
        let mass = integrate(&rho);
        Ok(Self { rho, mass, time: 0.0 })
    }
}

fn check_density(rho: &RealField) -> Result<()> {
    let max = rho.values().iter().fold(0.0f64, |m, v| m.max(*v));
    for (index, &value) in rho.values().iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if value < -NEGATIVE_TOLERANCE * max {
            return Err(Error::NegativeDensity { index, value });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QseModel {
    /// `rho_t = (rho (U + Q)')'/b + kappa^2 rho (E - Q - U)/b`
    ZeroTemperature,
    /// Adds `k_B T ln(rho)` to the chemical potential in both terms, with `F` for `E`.
    Thermal,
    /// The thermal equation without the quantum potential.
    ClassicalThermal,
}

/// The source term acts only where `rho > SOURCE_MASK * max(rho)`. Below
/// that, `-rho ln(rho)` would lift roundoff noise exponentially fast.
pub const SOURCE_MASK: f64 = 1e-13;

/// Background, relative to the peak density, added to `rho` in the
/// denominator of `rho'^2 / rho`. Kept below `SOURCE_MASK`: where the
/// regularization bites, the quantum source doubles and fattens the tails.
pub const DENSITY_REGULARIZATION: f64 = 1e-14;

/// `(rho'' - rho'^2/rho, rho Q)` with `rho Q = -(hbar^2/4m)(rho'' - rho'^2/(2 rho))`.
/// Written in `rho` rather than `sqrt(rho)`, so roundoff-level tails stay
/// roundoff-level.
fn quantum_terms(rho: &RealField, phys: &PhysicalParams) -> Result<(RealField, RealField)> {
    let d = rho.spectral_derivatives(&[1, 2])?;
    let (r1, r2) = (d[0].values(), d[1].values());
    let max = rho.values().iter().fold(0.0f64, |m, v| m.max(*v));
    let clamp = DENSITY_REGULARIZATION * max;
    let c = phys.hbar * phys.hbar / (4.0 * phys.mass);
    let n = rho.len();
    let mut stress = vec![0.0; n];
    let mut rho_q = vec![0.0; n];
    for j in 0..n {
        let w = r1[j] * r1[j] / (rho.values()[j].max(0.0) + clamp);
        stress[j] = r2[j] - w;
        rho_q[j] = -c * (r2[j] - 0.5 * w);
    }
    Ok((RealField::from_parts(rho.grid(), stress), RealField::from_parts(rho.grid(), rho_q)))
}

/// Explicit Heun (RK2) stepper. The drift part is a spectral divergence of
/// a flux, the source is pointwise. The Bohm force enters through the
/// quantum stress: `rho Q' = -(hbar^2/4m)(rho'' - rho'^2/rho)'`.
#[derive(Debug, Clone)]
pub struct QseStepper {
    grid: Grid1D,
    model: QseModel,
    potential: RealField,
    potential_gradient: RealField,
    tp: TeleportationParams,
    phys: PhysicalParams,
    dt: f64,
    source_mask: f64,
}

impl QseStepper {
    pub fn new(
        grid: &Grid1D,
        model: QseModel,
        potential: &PotentialSpec,
        tp: TeleportationParams,
        phys: PhysicalParams,
        dt: f64,
    ) -> Result<Self> {
        tp.validate()?;
        phys.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            grid: grid.clone(),
            model,
            potential: potential.sample(grid, &phys)?,
            potential_gradient: potential.gradient(grid, &phys)?,
            tp,
            phys,
            dt,
            source_mask: SOURCE_MASK,
        })
    }

    /// Stepper whose `dt` is `safety * stable_dt(rho)`.
    pub fn with_stable_dt(
        grid: &Grid1D,
        model: QseModel,
        potential: &PotentialSpec,
        tp: TeleportationParams,
        phys: PhysicalParams,
        rho: &RealField,
        safety: f64,
    ) -> Result<Self> {
        let mut s = Self::new(grid, model, potential, tp, phys, 1.0)?;
        s.dt = safety * s.stable_dt(rho)?;
        Ok(s)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn model(&self) -> QseModel {
        self.model
    }

    fn temperature_term(&self) -> f64 {
        match self.model {
            QseModel::ZeroTemperature => 0.0,
            QseModel::Thermal | QseModel::ClassicalThermal => self.phys.k_b * self.tp.temperature,
        }
    }

    fn quantum(&self) -> bool {
        self.model != QseModel::ClassicalThermal
    }

    /// `1 / lambda` with `lambda` bounding the linearized rates at `rho`:
    /// `(hbar^2/4mb) k^2 (k^2 + g^2)` from the quantum stress, where
    /// `g = max|rho'| / (rho + regularization)`; `k_B T k^2 / b` and
    /// `k max|U'| / b` from the drift; and the largest pointwise source rate.
    pub fn stable_dt(&self, rho: &RealField) -> Result<f64> {
        let k = self.grid.max_wavenumber();
        let b = self.tp.friction;
        let kt = self.temperature_term();
        let du_max = self.potential_gradient.max_abs();
        let mut lam = kt / b * k * k + k * du_max / b;
        let mut q_max = 0.0;
        if self.quantum() {
            let r1 = rho.gradient()?;
            let max = rho.values().iter().fold(0.0f64, |m, v| m.max(*v));
            let reg = DENSITY_REGULARIZATION * max;
            let g2 = rho
                .values()
                .iter()
                .zip(r1.values())
                .map(|(r, d)| {
                    let q = d / (r.max(0.0) + reg);
                    q * q
                })
                .fold(0.0, f64::max);
            let c = self.phys.hbar * self.phys.hbar / (4.0 * self.phys.mass);
            lam += c / b * k * k * (k * k + g2);
            q_max = c * g2;
        }
        let max = rho.values().iter().fold(0.0f64, |m, v| m.max(*v));
        let thr = self.source_mask * max;
        let src = rho
            .values()
            .iter()
            .zip(self.potential.values())
            .filter(|(r, _)| **r > thr)
            .map(|(r, u)| (self.tp.energy - u - kt * r.ln()).abs())
            .fold(0.0, f64::max)
            + q_max;
        lam += self.tp.kappa * self.tp.kappa * src / b;
        Ok(1.0 / lam)
    }

    /// Right-hand side of the density equation and the integrated source.
    pub fn rate(&self, rho: &RealField) -> Result<(RealField, f64)> {
        if rho.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let n = rho.len();
        let b = self.tp.friction;
        let kt = self.temperature_term();
        let du = self.potential_gradient.values();
        let u = self.potential.values();
        let r = rho.values();
        let mut flux: Vec<f64> = (0..n).map(|j| r[j] * du[j]).collect();
        let mut source: Vec<f64> = (0..n).map(|j| r[j] * (self.tp.energy - u[j])).collect();
        let thr = self.source_mask * r.iter().fold(0.0f64, |m, v| m.max(*v));
        if self.quantum() {
            let (stress, rho_q) = quantum_terms(rho, &self.phys)?;
            let sx = stress.gradient()?;
            let c = self.phys.hbar * self.phys.hbar / (4.0 * self.phys.mass);
            for j in 0..n {
                flux[j] -= c * sx.values()[j];
                source[j] -= rho_q.values()[j];
            }
        }
        if kt > 0.0 {
            let rx = rho.gradient()?;
            for j in 0..n {
                flux[j] += kt * rx.values()[j];
                if r[j] > thr {
                    source[j] -= kt * r[j] * r[j].ln();
                }
            }
        }
        let div = RealField::from_parts(&self.grid, flux).gradient()?;
        let k2 = self.tp.kappa * self.tp.kappa;
        let source = RealField::from_parts(
            &self.grid,
            (0..n).map(|j| if r[j] > thr { k2 * source[j] / b } else { 0.0 }).collect(),
        );
        let total_source = integrate(&source);
        let rate = div.zip_map(&source, |d, s| d / b + s)?;
        Ok((rate, total_source))
    }

    /// One Heun step; fails with a domain error if `dt` exceeds
    /// [`QseStepper::stable_dt`] at the current density.
    pub fn apply(&self, state: &SmoluchowskiState, step: usize) -> Result<SmoluchowskiState> {
        let bound = self.stable_dt(&state.rho)?;
        if self.dt > bound {
            return Err(Error::Domain(format!("dt = {} exceeds the explicit stability bound {bound}", self.dt)));
        }
        self.apply_unchecked(state, step)
    }

    /// Steps to `t_end`, re-evaluating the bound before every step and using
    /// `safety * stable_dt` (clipped so the last step lands on `t_end`).
    /// `step` counts the steps taken; returns the number taken here.
    pub fn advance_to(
        &self,
        state: &mut SmoluchowskiState,
        t_end: f64,
        safety: f64,
        step: &mut usize,
    ) -> Result<usize> {
        if !(safety > 0.0 && safety <= 1.0) {
            return Err(Error::Domain(format!("safety factor must be in (0, 1], got {safety}")));
        }
        let start = *step;
        while state.time < t_end {
            let remaining = t_end - state.time;
            let mut dt = safety * self.stable_dt(&state.rho)?;
            if dt >= remaining || remaining - dt < 1e-12 * t_end.abs().max(1.0) {
                dt = remaining;
            }
            *step += 1;
            let mut next = self.heun(state, dt, *step)?;
            if dt == remaining {
                next.time = t_end;
            }
            *state = next;
        }
        Ok(*step - start)
    }

    pub(crate) fn apply_unchecked(&self, state: &SmoluchowskiState, step: usize) -> Result<SmoluchowskiState> {
        self.heun(state, self.dt, step)
    }

    fn heun(&self, state: &SmoluchowskiState, dt: f64, step: usize) -> Result<SmoluchowskiState> {
        let (k1, _) = self.rate(&state.rho)?;
        let mid = state.rho.zip_map(&k1, |r, k| r + dt * k)?;
        let (k2, _) = self.rate(&mid)?;
        let next: Vec<f64> = (0..state.rho.len())
            .map(|j| state.rho.values()[j] + 0.5 * dt * (k1.values()[j] + k2.values()[j]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepDiverged { step });
        }
        let rho = RealField::from_parts(&self.grid, next);
        check_density(&rho)?;
        let mass = integrate(&rho);
        Ok(SmoluchowskiState { rho, mass, time: state.time + dt })
    }
}

/// One zero-temperature step.
pub fn step_qse_teleport(
    state: &SmoluchowskiState,
    potential: &PotentialSpec,
    tp: &TeleportationParams,
    phys: &PhysicalParams,
    dt: f64,
) -> Result<SmoluchowskiState> {
    QseStepper::new(state.rho.grid(), QseModel::ZeroTemperature, potential, *tp, *phys, dt)?.apply(state, 0)
}

/// One thermal step.
pub fn step_qse_thermal(
    state: &SmoluchowskiState,
    potential: &PotentialSpec,
    tp: &TeleportationParams,
    phys: &PhysicalParams,
    dt: f64,
) -> Result<SmoluchowskiState> {
    QseStepper::new(state.rho.grid(), QseModel::Thermal, potential, *tp, *phys, dt)?.apply(state, 0)
}

/// Constant `E` (or `F`) that makes the integrated source vanish for the
/// given density: the `rho`-weighted mean of the chemical potential of
/// `model` (`Q + U`, plus `k_B T ln(rho)` for the thermal models).
pub fn zero_mean_source_energy(
    rho: &RealField,
    potential: &PotentialSpec,
    phys: &PhysicalParams,
    model: QseModel,
    temperature: f64,
) -> Result<f64> {
    let u = potential.sample(rho.grid(), phys)?;
    let (_, mut rho_q) = quantum_terms(rho, phys)?;
    if model == QseModel::ClassicalThermal {
        rho_q = RealField::zeros(rho.grid());
    }
    let kt = if model == QseModel::ZeroTemperature { 0.0 } else { phys.k_b * temperature };
    let weighted: Vec<f64> = (0..rho.len())
        .map(|j| {
            let r = rho.values()[j];
            let log = if r > DEFAULT_FLOOR { kt * r * r.ln() } else { 0.0 };
            r * u.values()[j] + rho_q.values()[j] + log
        })
        .collect();
    let mass = integrate(rho);
    if !(mass > 0.0) {
        return Err(Error::Domain("density has no mass".into()));
    }
    Ok(integrate(&RealField::from_parts(rho.grid(), weighted)) / mass)
}

/// `x - ln(1 + x)` without cancellation near zero.
fn x_minus_log1p(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let mut term = -x;
        let mut sum = 0.0;
        for k in 2..40 {
            term *= -x;
            sum += term / k as f64;
        }
        sum
    } else {
        x - x.ln_1p()
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("time must be non-negative, got {t}")));
    }
    Ok(())
}

/// `g(s) = s - (2/kappa^2) ln(1 + s kappa^2 / 2)`.
pub fn zero_temperature_law_lhs(s: f64, kappa: f64) -> f64 {
    let k2 = kappa * kappa;
    (2.0 / k2) * x_minus_log1p(0.5 * s * k2)
}

/// Root `s` of `g(s) = hbar^2 kappa^2 t / (4 m b)`.
pub fn zero_temperature_dispersion(t: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> Result<f64> {
    check_time(t)?;
    if tp.kappa == 0.0 {
        return Err(Error::Domain("kappa = 0: use the square-root law".into()));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let rhs = phys.hbar * phys.hbar * tp.kappa * tp.kappa * t / (4.0 * phys.mass * tp.friction);
    let guess = (phys.hbar * (t / (phys.mass * tp.friction)).sqrt()).max(4.0 * rhs / (tp.kappa * tp.kappa));
    bracket_and_bisect(|s| zero_temperature_law_lhs(s, tp.kappa) - rhs, 0.0, guess, ROOT_TOLERANCE)
}

/// Time at which the zero-temperature law reaches dispersion `s`.
pub fn zero_temperature_time_of(s: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> f64 {
    4.0 * phys.mass * tp.friction * zero_temperature_law_lhs(s, tp.kappa) / (phys.hbar * phys.hbar * tp.kappa * tp.kappa)
}

/// `h(s) = (2/kappa^2) ln(1 + s kappa^2/2) - lambda^2 ln(1 + s/lambda^2)`.
/// Small `s`: difference of the two `x - ln(1 + x)` terms, each `O(s^2)`.
/// Large `s`: the logarithms directly, since both of those terms grow like `s`.
pub fn thermal_law_lhs(s: f64, kappa: f64, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    if kappa == 0.0 {
        return l2 * x_minus_log1p(s / l2);
    }
    let q = 2.0 / (kappa * kappa);
    if s > q + l2 {
        q * (s / q).ln_1p() - l2 * (s / l2).ln_1p()
    } else {
        l2 * x_minus_log1p(s / l2) - q * x_minus_log1p(s / q)
    }
}

fn thermal_inputs(tp: &TeleportationParams, phys: &PhysicalParams) -> Result<(f64, f64)> {
    if !(tp.temperature > 0.0) {
        return Err(Error::Domain("thermal law needs T > 0".into()));
    }
    let product = tp.well_posedness_product(phys);
    if product >= 2.0 {
        return Err(Error::IllPosed { product });
    }
    Ok((tp.thermal_wavelength(phys), (2.0 - product) * tp.einstein_diffusion(phys)))
}

/// Root `s` of `h(s) = (2 - kappa^2 lambda_T^2) D t`.
pub fn thermal_dispersion(t: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> Result<f64> {
    check_time(t)?;
    let (lambda, rate) = thermal_inputs(tp, phys)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    let rhs = rate * t;
    let guess = (2.0 * tp.einstein_diffusion(phys) * t).max(lambda * (2.0 * tp.einstein_diffusion(phys) * t).sqrt());
    bracket_and_bisect(|s| thermal_law_lhs(s, tp.kappa, lambda) - rhs, 0.0, guess, ROOT_TOLERANCE)
}

/// Time at which the thermal law reaches dispersion `s`.
pub fn thermal_time_of(s: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> Result<f64> {
    let (lambda, rate) = thermal_inputs(tp, phys)?;
    Ok(thermal_law_lhs(s, tp.kappa, lambda) / rate)
}

/// `(2/kappa^2)(exp(D kappa^2 t) - 1)`, reducing to `2 D t` at `kappa = 0`.
pub fn high_temperature_dispersion(t: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> Result<f64> {
    check_time(t)?;
    let d = tp.einstein_diffusion(phys);
    let k2 = tp.kappa * tp.kappa;
    if k2 == 0.0 {
        return Ok(2.0 * d * t);
    }
    Ok((2.0 / k2) * (d * k2 * t).exp_m1())
}

/// Time at which the high-temperature law reaches dispersion `s`.
pub fn high_temperature_time_of(s: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> f64 {
    let d = tp.einstein_diffusion(phys);
    let k2 = tp.kappa * tp.kappa;
    if k2 == 0.0 {
        s / (2.0 * d)
    } else {
        (0.5 * s * k2).ln_1p() / (d * k2)
    }
}

/// `ds/dt` implied by the zero-temperature law:
/// `hbar^2 / (2 m b s) + hbar^2 kappa^2 / (4 m b)`.
pub fn gaussian_ansatz_rate(s: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("dispersion must be positive, got {s}")));
    }
    let c = phys.hbar * phys.hbar / (phys.mass * tp.friction);
    Ok(c / (2.0 * s) + c * tp.kappa * tp.kappa / 4.0)
}

/// `ds/dt` implied by the thermal law:
/// `2D(lambda^2/s)(1 + s kappa^2/2)(1 + s/lambda^2)`.
pub fn thermal_ansatz_rate(s: f64, tp: &TeleportationParams, phys: &PhysicalParams) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("dispersion must be positive, got {s}")));
    }
    let (lambda, _) = thermal_inputs(tp, phys)?;
    let l2 = lambda * lambda;
    let d = tp.einstein_diffusion(phys);
    Ok(2.0 * d * (l2 / s) * (1.0 + 0.5 * s * tp.kappa * tp.kappa) * (1.0 + s / l2))
}
