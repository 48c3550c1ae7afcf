//! Coupled `psi` / `conj(psi)` dynamics: the action ODEs and their closed
//! forms, the oscillating mass, a split-step solver and residual checks.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{fft, ifft, ComplexField, Grid1D, PhysicalParams, RealField};
use crate::madelung::{occupied_mask, quantum_force_masked, MaskedField};
use crate::numerics::periodic_mean;

/// Default bound on `|eps| / E` for the perturbative formulas.
pub const DEFAULT_RATIO_GUARD: f64 = 0.2;

/// Phase ratio `|S_re| / hbar` above which the linearized coupling is flagged.
pub const LINEARIZATION_LIMIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualCouplingParams {
    pub energy: f64,
    pub epsilon: f64,
    pub ratio_guard: f64,
}

impl DualCouplingParams {
    pub fn new(energy: f64, epsilon: f64) -> Result<Self> {
        if !(energy.is_finite() && energy > 0.0) {
            return Err(Error::Domain(format!("energy must be positive, got {energy}")));
        }
        if !epsilon.is_finite() {
            return Err(Error::Domain("coupling must be finite".into()));
        }
        Ok(Self { energy, epsilon, ratio_guard: DEFAULT_RATIO_GUARD })
    }

    pub fn with_ratio_guard(mut self, guard: f64) -> Self {
        self.ratio_guard = guard;
        self
    }

    /// `eps / E`
    pub fn ratio(&self) -> f64 {
        self.epsilon / self.energy
    }

    fn check_guard(&self) -> Result<()> {
        if self.ratio().abs() > self.ratio_guard {
            return Err(Error::Domain(format!(
                "|eps/E| = {} exceeds the guard {}",
                self.ratio().abs(),
                self.ratio_guard
            )));
        }
        Ok(())
    }

    fn check_subcritical(&self) -> Result<()> {
        if self.epsilon.abs() >= self.energy {
            return Err(Error::Domain(format!("closed form needs |eps| < E, got eps = {}", self.epsilon)));
        }
        Ok(())
    }

    /// `sqrt(E^2 - eps^2) / hbar`
    fn omega(&self, hbar: f64) -> f64 {
        (self.energy * self.energy - self.epsilon * self.epsilon).sqrt() / hbar
    }

    /// Largest RK4 step accepted by the action integrator.
    pub fn max_action_step(&self, hbar: f64) -> f64 {
        hbar / (20.0 * (self.energy + self.epsilon.abs()))
    }
}

/// Samples of the complex action `S = S_re + i S_im`, gauged to zero at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTrajectory {
    pub times: Vec<f64>,
    pub s_re: Vec<f64>,
    pub s_im: Vec<f64>,
}

impl ActionTrajectory {
    /// `exp(i S / hbar)` at every sample.
    pub fn wavefunction(&self, hbar: f64) -> Vec<Complex64> {
        self.s_re
            .iter()
            .zip(&self.s_im)
            .map(|(r, i)| (Complex64::new(-i, *r) / hbar).exp())
            .collect()
    }
}

fn action_rhs(p: &DualCouplingParams, hbar: f64, s_re: f64) -> (f64, f64) {
    let arg = 2.0 * s_re / hbar;
    (-p.energy - p.epsilon * arg.cos(), p.epsilon * arg.sin())
}

/// RK4 solution (steps of a quarter of [`DualCouplingParams::max_action_step`])
/// of `dS_re/dt = -E - eps cos(2 S_re / hbar)`,
/// `dS_im/dt = eps sin(2 S_re / hbar)` from `S(0) = 0`, sampled at `times`.
pub fn integrate_action_odes(
    params: &DualCouplingParams,
    phys: &PhysicalParams,
    times: &[f64],
) -> Result<ActionTrajectory> {
    integrate_action_odes_with_step(params, phys, times, 0.25 * params.max_action_step(phys.hbar))
}

/// As [`integrate_action_odes`] with an explicit upper bound on the step.
pub fn integrate_action_odes_with_step(
    params: &DualCouplingParams,
    phys: &PhysicalParams,
    times: &[f64],
    max_dt: f64,
) -> Result<ActionTrajectory> {
    let bound = params.max_action_step(phys.hbar);
    if !(max_dt > 0.0 && max_dt <= bound * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("action step {max_dt} outside (0, {bound}]")));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("sample times must be non-negative and strictly increasing".into()));
    }
    let hbar = phys.hbar;
    let (mut t, mut sr, mut si) = (0.0, 0.0, 0.0);
    let mut out = ActionTrajectory { times: times.to_vec(), s_re: Vec::new(), s_im: Vec::new() };
    let mut step = 0;
    for &target in times {
        let span = target - t;
        let n = (span / max_dt).ceil().max(if span > 0.0 { 1.0 } else { 0.0 }) as usize;
        let h = if n > 0 { span / n as f64 } else { 0.0 };
        for _ in 0..n {
            let (a1, b1) = action_rhs(params, hbar, sr);
            let (a2, b2) = action_rhs(params, hbar, sr + 0.5 * h * a1);
            let (a3, b3) = action_rhs(params, hbar, sr + 0.5 * h * a2);
            let (a4, b4) = action_rhs(params, hbar, sr + h * a3);
            sr += h * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0;
            si += h * (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0;
            step += 1;
            if !(sr.is_finite() && si.is_finite()) {
                return Err(Error::StepDiverged { step });
            }
        }
        t = target;
        out.s_re.push(sr);
        out.s_im.push(si);
    }
    Ok(out)
}

/// `(E + eps cos(2 S_re / hbar)) exp(-2 S_im / hbar)`, constant along exact
/// solutions of the action ODEs (equal to `E + eps` in the `S(0) = 0` gauge).
pub fn action_invariant(params: &DualCouplingParams, phys: &PhysicalParams, s_re: f64, s_im: f64) -> f64 {
    (params.energy + params.epsilon * (2.0 * s_re / phys.hbar).cos()) * (-2.0 * s_im / phys.hbar).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionBranch {
    /// `-hbar arctan[c tan(Omega t)]`, which solves the ODE from `S_re(0) = 0`.
    #[default]
    OdeConsistent,
    /// `+hbar arctan[c tan(Omega t)]`, the positive-slope variant.
    Printed,
}

/// Closed-form real action with `c = sqrt((E + eps)/(E - eps))` and
/// `Omega = sqrt(E^2 - eps^2)/hbar`, continued across the poles of `tan`.
pub fn closed_form_action(params: &DualCouplingParams, phys: &PhysicalParams, t: f64, branch: ActionBranch) -> Result<f64> {
    params.check_subcritical()?;
    let c = ((params.energy + params.epsilon) / (params.energy - params.epsilon)).sqrt();
    let phi = params.omega(phys.hbar) * t;
    let n = (phi / PI).round();
    let r = phi - n * PI;
    let value = phys.hbar * ((c * r.sin()).atan2(r.cos()) + n * PI);
    Ok(match branch {
        ActionBranch::OdeConsistent => -value,
        ActionBranch::Printed => value,
    })
}

/// Imaginary action implied by the real one through the invariant:
/// `S_im = (hbar/2) ln[(E + eps cos(2 S_re/hbar)) / (E + eps)]`.
pub fn closed_form_imag_action(params: &DualCouplingParams, phys: &PhysicalParams, t: f64) -> Result<f64> {
    let s_re = closed_form_action(params, phys, t, ActionBranch::OdeConsistent)?;
    let num = params.energy + params.epsilon * (2.0 * s_re / phys.hbar).cos();
    Ok(0.5 * phys.hbar * (num / (params.energy + params.epsilon)).ln())
}

/// `pi hbar / sqrt(E^2 - eps^2)`; `S_re` drops by `pi hbar` per period.
pub fn action_period(params: &DualCouplingParams, phys: &PhysicalParams) -> Result<f64> {
    params.check_subcritical()?;
    Ok(PI / params.omega(phys.hbar))
}

/// `exp[-i E t / hbar + (eps / 2E) cos(2 E t / hbar)]`.
pub fn approx_wavefunction(params: &DualCouplingParams, phys: &PhysicalParams, t: f64) -> Result<Complex64> {
    params.check_guard()?;
    let w = params.energy * t / phys.hbar;
    Ok(Complex64::new(0.5 * params.ratio() * (2.0 * w).cos(), -w).exp())
}

/// `|psi(t)|^2` for the homogeneous solution with `psi(0) = 1`:
/// `(E + eps) / (E + eps cos(2 S_re / hbar))`.
pub fn exact_homogeneous_density(params: &DualCouplingParams, phys: &PhysicalParams, t: f64) -> Result<f64> {
    let s_re = closed_form_action(params, phys, t, ActionBranch::OdeConsistent)?;
    Ok((params.energy + params.epsilon) / (params.energy + params.epsilon * (2.0 * s_re / phys.hbar).cos()))
}

/// `m exp[(eps/E) cos(2 E t / hbar)]`.
pub fn mass_oscillation(params: &DualCouplingParams, phys: &PhysicalParams, mass: f64, t: f64) -> f64 {
    mass * (params.ratio() * (2.0 * params.energy * t / phys.hbar).cos()).exp()
}

/// Amplitude `m' = m eps / E` of the first-order oscillation.
pub fn exchanged_mass(params: &DualCouplingParams, mass: f64) -> f64 {
    mass * params.ratio()
}

/// `m + m' cos(2 E t / hbar)`.
pub fn mass_oscillation_first_order(params: &DualCouplingParams, phys: &PhysicalParams, mass: f64, t: f64) -> f64 {
    mass + exchanged_mass(params, mass) * (2.0 * params.energy * t / phys.hbar).cos()
}

/// Period `pi hbar / E` of the mass oscillation.
pub fn mass_period(params: &DualCouplingParams, phys: &PhysicalParams) -> f64 {
    PI * phys.hbar / params.energy
}

/// Mean of the exact oscillating mass over one period by the rectangle rule.
pub fn mass_period_average(params: &DualCouplingParams, phys: &PhysicalParams, mass: f64, samples: usize) -> f64 {
    periodic_mean(|t| mass_oscillation(params, phys, mass, t), mass_period(params, phys), samples.max(1))
}

/// Mean of the first-order mass over one period.
pub fn mass_period_average_first_order(
    params: &DualCouplingParams,
    phys: &PhysicalParams,
    mass: f64,
    samples: usize,
) -> f64 {
    periodic_mean(
        |t| mass_oscillation_first_order(params, phys, mass, t),
        mass_period(params, phys),
        samples.max(1),
    )
}

/// Coefficients `(C, alpha S, beta S)` of the exact local flow
/// `a' = C a + alpha S b`, `b' = C b - beta S a` over time `tau`.
fn local_coefficients(alpha: f64, beta: f64, tau: f64) -> (f64, f64, f64) {
    let w2 = alpha * beta;
    let x = w2 * tau * tau;
    let (c, s) = if x.abs() < 1e-3 {
        (
            1.0 - x / 2.0 + x * x / 24.0 - x * x * x / 720.0,
            tau * (1.0 - x / 6.0 + x * x / 120.0 - x * x * x / 5040.0),
        )
    } else if w2 > 0.0 {
        let w = w2.sqrt();
        ((w * tau).cos(), (w * tau).sin() / w)
    } else {
        let w = (-w2).sqrt();
        ((w * tau).cosh(), (w * tau).sinh() / w)
    };
    (c, alpha * s, beta * s)
}

/// Split-step solver for `i hbar psi_t = H psi + eps conj(psi)`.
///
/// Half step of the local `(U, eps)` flow, full kinetic step, half local
/// step. Real-linear but not complex-linear.
#[derive(Debug, Clone)]
pub struct DualStepper {
    grid: Grid1D,
    local: Vec<(f64, f64, f64)>,
    kinetic: Vec<Complex64>,
}

impl DualStepper {
    pub fn new(potential: &RealField, epsilon: f64, params: &PhysicalParams, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if !epsilon.is_finite() {
            return Err(Error::Domain("coupling must be finite".into()));
        }
        let grid = potential.grid().clone();
        let hbar = params.hbar;
        let local = potential
            .values()
            .iter()
            .map(|u| local_coefficients((u - epsilon) / hbar, (u + epsilon) / hbar, 0.5 * dt))
            .collect();
        let kinetic = grid
            .wavenumbers()
            .iter()
            .map(|k| Complex64::new(0.0, -hbar * k * k * dt / (2.0 * params.mass)).exp())
            .collect();
        Ok(Self { grid, local, kinetic })
    }

    fn local_half(&self, v: &mut [Complex64]) {
        for (z, &(c, as_, bs)) in v.iter_mut().zip(&self.local) {
            let (a, b) = (z.re, z.im);
            *z = Complex64::new(c * a + as_ * b, c * b - bs * a);
        }
    }

    pub fn apply(&self, psi: &ComplexField, step: usize) -> Result<ComplexField> {
        if psi.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut v = psi.values().to_vec();
        self.local_half(&mut v);
        fft(&mut v);
        for (a, k) in v.iter_mut().zip(&self.kinetic) {
            *a *= k;
        }
        ifft(&mut v);
        self.local_half(&mut v);
        ComplexField::checked_step(&self.grid, v, step)
    }
}

/// One step of the coupled equation; see [`DualStepper`].
pub fn step_dual_schrodinger(
    psi: &ComplexField,
    potential: &RealField,
    epsilon: f64,
    params: &PhysicalParams,
    dt: f64,
) -> Result<ComplexField> {
    if potential.grid() != psi.grid() {
        return Err(Error::GridMismatch);
    }
    DualStepper::new(potential, epsilon, params, dt)?.apply(psi, 0)
}

/// Darcy-type drag `eps V / (m D_q)` with `D_q = i hbar / 2m`. For
/// `eps = D_q b` it reduces to the real friction force density `b V / m`.
pub fn darcy_term(epsilon: Complex64, velocity: &RealField, params: &PhysicalParams) -> ComplexField {
    let dq = Complex64::new(0.0, params.quantum_diffusion());
    let factor = epsilon / (params.mass * dq);
    ComplexField::from_parts(velocity.grid(), velocity.values().iter().map(|v| factor * v).collect())
}

/// Imbalance of the complex Hamilton-Jacobi equation with the conjugate
/// coupling, at the middle snapshot of a three-point series.
#[derive(Debug, Clone)]
pub struct TeleportationResidual {
    /// With the exact coupling `eps conj(psi)/psi`.
    pub exact: Vec<Complex64>,
    /// With the coupling replaced by `eps (1 - 2i S_re/hbar)`.
    pub linearized: Vec<Complex64>,
    pub mask: Vec<bool>,
    pub max_exact: f64,
    pub max_linearized: f64,
    /// Largest `|S_re| / hbar` (principal phase) on the mask.
    pub max_phase_ratio: f64,
    /// Set when `max_phase_ratio` exceeds [`LINEARIZATION_LIMIT`].
    pub linearization_violated: bool,
    /// `|eps| max|V| / (m hbar / 2m)` on the mask.
    pub darcy_magnitude: f64,
}

/// Residual `S_t + S'^2/2m + U - D_q S'' + coupling` with the actions read
/// off `psi` as `S_t = -i hbar psi_t/psi`, `S' = -i hbar psi'/psi`.
pub fn teleportation_ns_residual(
    series: &[ComplexField; 3],
    dt: f64,
    potential: &RealField,
    epsilon: f64,
    params: &PhysicalParams,
    relative: f64,
) -> Result<TeleportationResidual> {
    let grid = series[1].grid();
    if series.iter().any(|p| p.grid() != grid) || potential.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if !(dt > 0.0) {
        return Err(Error::Domain("time step must be positive".into()));
    }
    let masks = series
        .iter()
        .map(|p| occupied_mask(&p.modulus_squared(), relative))
        .collect::<Result<Vec<_>>>()?;
    let n = grid.points();
    let mask: Vec<bool> = (0..n).map(|j| masks.iter().all(|m| m[j])).collect();
    let psi = series[1].values();
    let d = series[1].spectral_derivatives(&[1, 2])?;
    let (d1, d2) = (d[0].values(), d[1].values());
    let hbar = params.hbar;
    let m = params.mass;
    let ih = Complex64::new(0.0, hbar);
    let dq = Complex64::new(0.0, params.quantum_diffusion());

    let mut out = TeleportationResidual {
        exact: vec![Complex64::new(0.0, 0.0); n],
        linearized: vec![Complex64::new(0.0, 0.0); n],
        mask: mask.clone(),
        max_exact: 0.0,
        max_linearized: 0.0,
        max_phase_ratio: 0.0,
        linearization_violated: false,
        darcy_magnitude: 0.0,
    };
    let mut max_v: f64 = 0.0;
    for j in 0..n {
        if !mask[j] {
            continue;
        }
        let p = psi[j];
        let pt = (series[2].values()[j] - series[0].values()[j]) / (2.0 * dt);
        let s_t = -ih * pt / p;
        let g = d1[j] / p;
        let s_x = -ih * g;
        let s_xx = -ih * (d2[j] / p - g * g);
        let base = s_t + s_x * s_x / (2.0 * m) + potential.values()[j] - dq * s_xx;
        let theta = p.arg();
        let exact = base + epsilon * p.conj() / p;
        let lin = base + Complex64::new(epsilon, -2.0 * epsilon * theta);
        out.exact[j] = exact;
        out.linearized[j] = lin;
        out.max_exact = out.max_exact.max(exact.norm());
        out.max_linearized = out.max_linearized.max(lin.norm());
        out.max_phase_ratio = out.max_phase_ratio.max(theta.abs());
        max_v = max_v.max((hbar / m * g.im).abs());
    }
    out.linearization_violated = out.max_phase_ratio > LINEARIZATION_LIMIT;
    out.darcy_magnitude = epsilon.abs() * max_v / params.quantum_diffusion() / m;
    Ok(out)
}

/// `integral_{x0}^{x} f` on the periodic grid, exact for trigonometric
/// polynomials plus the linear ramp from the mean.
pub fn antiderivative(f: &RealField) -> RealField {
    let grid = f.grid();
    let n = grid.points();
    let mut hat: Vec<Complex64> = f.values().iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft(&mut hat);
    let mean = hat[0].re / n as f64;
    hat[0] = Complex64::new(0.0, 0.0);
    if n % 2 == 0 {
        hat[n / 2] = Complex64::new(0.0, 0.0);
    }
    for (h, k) in hat.iter_mut().zip(grid.wavenumbers()) {
        if k != 0.0 {
            *h /= Complex64::new(0.0, k);
        }
    }
    ifft(&mut hat);
    let base = hat[0].re;
    let values = (0..n).map(|j| hat[j].re - base + mean * (grid.x(j) - grid.origin())).collect();
    RealField::from_parts(grid, values)
}

/// Check of the frictional momentum equation
/// `V_t + V V' + (U + Q)'/m = -b V / m` on a density history.
#[derive(Debug, Clone)]
pub struct FrictionalResidual {
    /// `V_t + V V' + (U + Q)'/m`
    pub lhs: MaskedField,
    /// `-b V / m`
    pub drag: MaskedField,
    pub velocity: MaskedField,
}

impl FrictionalResidual {
    /// `max|lhs - drag| / max|drag|` over the mask, optionally restricted to
    /// points where `keep(x)` holds.
    pub fn relative_mismatch(&self, keep: impl Fn(f64) -> bool) -> f64 {
        let grid = self.lhs.field.grid();
        let (mut num, mut den): (f64, f64) = (0.0, 0.0);
        for j in 0..grid.points() {
            if self.lhs.mask[j] && keep(grid.x(j)) {
                let a = self.lhs.field.values()[j];
                let b = self.drag.field.values()[j];
                num = num.max((a - b).abs());
                den = den.max(b.abs());
            }
        }
        num / den
    }
}

/// Velocity and its gradient from the current reconstructed by
/// `J(x) = -integral_{x0}^{x} rho_t`.
fn flow_from_density(rho: &RealField, rho_t: &RealField, mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let j = antiderivative(rho_t).map(|v| -v)?;
    let rho_x = rho.gradient()?;
    let n = rho.len();
    let (mut v, mut vx) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        if mask[i] {
            let r = rho.values()[i];
            v[i] = j.values()[i] / r;
            vx[i] = (-rho_t.values()[i] - v[i] * rho_x.values()[i]) / r;
        }
    }
    Ok((v, vx))
}

/// Evaluates the frictional pair on five equally spaced density snapshots
/// (the middle one is the evaluation time). Assumes mass is conserved
/// between snapshots and no current enters through the left edge.
pub fn frictional_drag_residual(
    rho_series: &[RealField; 5],
    dt: f64,
    potential_gradient: &RealField,
    friction: f64,
    params: &PhysicalParams,
    relative: f64,
) -> Result<FrictionalResidual> {
    let grid = rho_series[2].grid();
    if rho_series.iter().any(|r| r.grid() != grid) || potential_gradient.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if !(dt > 0.0 && friction > 0.0) {
        return Err(Error::Domain("time step and friction must be positive".into()));
    }
    let masks = rho_series
        .iter()
        .map(|r| occupied_mask(r, relative))
        .collect::<Result<Vec<_>>>()?;
    let n = grid.points();
    let mask: Vec<bool> = (0..n).map(|j| masks.iter().all(|m| m[j])).collect();
    let rate = |a: &RealField, b: &RealField| a.zip_map(b, |x, y| (y - x) / (2.0 * dt));
    let (v_prev, _) = flow_from_density(&rho_series[1], &rate(&rho_series[0], &rho_series[2])?, &mask)?;
    let (v, vx) = flow_from_density(&rho_series[2], &rate(&rho_series[1], &rho_series[3])?, &mask)?;
    let (v_next, _) = flow_from_density(&rho_series[3], &rate(&rho_series[2], &rho_series[4])?, &mask)?;
    let q = quantum_force_masked(&rho_series[2], params, relative)?;
    let m = params.mass;
    let du = potential_gradient.values();
    let mut lhs = vec![0.0; n];
    let mut drag = vec![0.0; n];
    for j in 0..n {
        if mask[j] {
            let vt = (v_next[j] - v_prev[j]) / (2.0 * dt);
            lhs[j] = vt + v[j] * vx[j] + (du[j] + q.field.values()[j]) / m;
            drag[j] = -friction * v[j] / m;
        }
    }
    Ok(FrictionalResidual {
        lhs: MaskedField { field: RealField::from_parts(grid, lhs), mask: mask.clone() },
        drag: MaskedField { field: RealField::from_parts(grid, drag), mask: mask.clone() },
        velocity: MaskedField { field: RealField::from_parts(grid, v), mask },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::norm_squared;
    use crate::schrodinger::step_unitary;

    fn phys() -> PhysicalParams {
        PhysicalParams::default()
    }

    fn sample_times(t_end: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| t_end * i as f64 / n as f64).collect()
    }

    #[test]
    fn decoupled_action_is_linear() {
        let p = DualCouplingParams::new(1.3, 0.0).unwrap();
        let tr = integrate_action_odes(&p, &phys(), &sample_times(5.0, 50)).unwrap();
        for ((t, r), i) in tr.times.iter().zip(&tr.s_re).zip(&tr.s_im) {
            assert!((r + 1.3 * t).abs() < 1e-12);
            assert_eq!(*i, 0.0);
        }
        for t in [0.0, 0.7, 4.0, 11.0] {
            let s = closed_form_action(&p, &phys(), t, ActionBranch::OdeConsistent).unwrap();
            assert!((s + 1.3 * t).abs() < 1e-12);
            let s = closed_form_action(&p, &phys(), t, ActionBranch::Printed).unwrap();
            assert!((s - 1.3 * t).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_integrator_over_three_periods() {
        for eps in [0.1, 0.5] {
            let p = DualCouplingParams::new(1.0, eps).unwrap();
            let period = action_period(&p, &phys()).unwrap();
            let tr = integrate_action_odes(&p, &phys(), &sample_times(3.0 * period, 300)).unwrap();
            for (k, t) in tr.times.iter().enumerate() {
                let s = closed_form_action(&p, &phys(), *t, ActionBranch::OdeConsistent).unwrap();
                assert!((s - tr.s_re[k]).abs() < 1e-8, "eps {eps} t {t}: {} vs {}", s, tr.s_re[k]);
                let si = closed_form_imag_action(&p, &phys(), *t).unwrap();
                assert!((si - tr.s_im[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn printed_branch_has_the_wrong_initial_slope() {
        let p = DualCouplingParams::new(1.0, 0.2).unwrap();
        let h = 1e-6;
        let slope = |b| closed_form_action(&p, &phys(), h, b).unwrap() / h;
        assert!((slope(ActionBranch::OdeConsistent) + 1.2).abs() < 1e-5);
        assert!((slope(ActionBranch::Printed) - 1.2).abs() < 1e-5);
    }

    #[test]
    fn imaginary_action_matches_first_order_form() {
        let p = DualCouplingParams::new(1.0, 0.1).unwrap();
        let period = action_period(&p, &phys()).unwrap();
        let tr = integrate_action_odes(&p, &phys(), &sample_times(period, 200)).unwrap();
        let err = tr
            .times
            .iter()
            .zip(&tr.s_im)
            .map(|(t, si)| (si - 0.5 * 0.1 * ((2.0 * t).cos() - 1.0)).abs())
            .fold(0.0, f64::max);
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn invariant_and_periodicity() {
        let p = DualCouplingParams::new(1.0, 0.3).unwrap();
        let period = action_period(&p, &phys()).unwrap();
        let base = sample_times(period, 40);
        let mut times = base.clone();
        times.extend(base.iter().skip(1).map(|t| t + period));
        let tr = integrate_action_odes(&p, &phys(), &times).unwrap();
        for k in 0..tr.times.len() {
            let inv = action_invariant(&p, &phys(), tr.s_re[k], tr.s_im[k]);
            assert!((inv - 1.3).abs() < 1e-10);
        }
        for k in 0..=40 {
            let later = if k == 0 { 40 } else { 40 + k };
            assert!((tr.s_im[later] - tr.s_im[k]).abs() < 1e-9);
        }
        assert!((tr.s_re[40] + PI).abs() < 1e-9);
    }

    #[test]
    fn closed_form_rejects_supercritical_coupling() {
        let p = DualCouplingParams::new(1.0, 1.0).unwrap();
        assert!(closed_form_action(&p, &phys(), 1.0, ActionBranch::OdeConsistent).is_err());
        assert!(integrate_action_odes_with_step(&p, &phys(), &[1.0], 1.0).is_err());
    }

    #[test]
    fn approximate_wavefunction_values() {
        let p = DualCouplingParams::new(1.0, 0.1).unwrap();
        let z = approx_wavefunction(&p, &phys(), 0.0).unwrap();
        assert!((z.re - 0.05f64.exp()).abs() < 1e-15 && z.im == 0.0);
        for t in [0.3, 1.1, 2.9] {
            let z = approx_wavefunction(&p, &phys(), t).unwrap();
            assert!((z.norm_sqr() - mass_oscillation(&p, &phys(), 1.0, t)).abs() < 1e-14);
        }
        let strong = DualCouplingParams::new(1.0, 0.5).unwrap();
        assert!(approx_wavefunction(&strong, &phys(), 0.0).is_err());
    }

    #[test]
    fn mass_forms() {
        let p = DualCouplingParams::new(2.0, 0.2).unwrap();
        assert!((mass_oscillation(&p, &phys(), 1.0, 0.0) - 0.1f64.exp()).abs() < 1e-15);
        assert!((mass_oscillation_first_order(&p, &phys(), 1.0, 0.0) - 1.1).abs() < 1e-15);
        assert!((mass_period_average_first_order(&p, &phys(), 3.0, 64) - 3.0).abs() < 1e-14);
        // I0(0.1) from its power series
        let i0: f64 = (0..12)
            .map(|k| {
                let f: f64 = (1..=k).map(|i| i as f64).product();
                0.05f64.powi(2 * k as i32) / (f * f)
            })
            .sum();
        assert!((mass_period_average(&p, &phys(), 1.0, 64) - i0).abs() < 1e-14);
        for t in sample_times(10.0, 100) {
            assert!((mass_oscillation(&p, &phys(), 1.0, t) - 1.0).abs() <= 0.1f64.exp() - 1.0 + 1e-15);
        }
    }

    fn periodic_state(g: &Grid1D) -> ComplexField {
        let kx = 2.0 * PI / g.length();
        ComplexField::from_fn(g, |x| Complex64::new(0.8 * (kx * x).cos(), 0.5 * (2.0 * kx * x).sin()).exp())
            .unwrap()
            .normalized()
            .unwrap()
    }

    #[test]
    fn zero_coupling_reduces_to_unitary_step() {
        let g = Grid1D::new(12.0, 64).unwrap();
        let u = RealField::from_fn(&g, |x| 0.3 * (2.0 * PI * x / 12.0).sin()).unwrap();
        let psi = periodic_state(&g);
        let a = step_dual_schrodinger(&psi, &u, 0.0, &phys(), 0.01).unwrap();
        let b = step_unitary(&psi, &u, &phys(), 0.01).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn local_flow_branches_agree() {
        let tau = 0.3;
        for (alpha, beta) in [(2.0, 1.5), (-0.7, 1.1), (1e-3, 2e-3), (0.0, 4.0)] {
            let (c, a_s, b_s) = local_coefficients(alpha, beta, tau);
            // compare with many small Euler-free RK4 steps of a' = alpha b, b' = -beta a
            let (mut a, mut b) = (0.4f64, -1.2f64);
            let n = 4000;
            let h = tau / n as f64;
            for _ in 0..n {
                let f = |a: f64, b: f64| (alpha * b, -beta * a);
                let k1 = f(a, b);
                let k2 = f(a + 0.5 * h * k1.0, b + 0.5 * h * k1.1);
                let k3 = f(a + 0.5 * h * k2.0, b + 0.5 * h * k2.1);
                let k4 = f(a + h * k3.0, b + h * k3.1);
                a += h * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0) / 6.0;
                b += h * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) / 6.0;
            }
            let ea = c * 0.4 + a_s * -1.2;
            let eb = c * -1.2 - b_s * 0.4;
            assert!((ea - a).abs() < 1e-12 && (eb - b).abs() < 1e-12, "{alpha} {beta}");
        }
    }

    #[test]
    fn homogeneous_density_follows_exact_law() {
        let g = Grid1D::new(2.0, 8).unwrap();
        let p = DualCouplingParams::new(1.0, 0.05).unwrap();
        let u = RealField::constant(&g, 1.0).unwrap();
        let dt = 1e-3;
        let stepper = DualStepper::new(&u, 0.05, &phys(), dt).unwrap();
        let mut psi = ComplexField::from_fn(&g, |_| Complex64::new(1.0, 0.0)).unwrap();
        let steps = 3000;
        for s in 1..=steps {
            psi = stepper.apply(&psi, s).unwrap();
            if s % 100 == 0 {
                let t = s as f64 * dt;
                let exact = exact_homogeneous_density(&p, &phys(), t).unwrap();
                assert!((psi.values()[3].norm_sqr() - exact).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn homogeneous_density_tracks_mass_law_with_matched_phase() {
        // starting from psi(0) = i exp(eps/2E), |psi|^2 follows
        // exp[(eps/E) cos(2Et/hbar)] up to O((eps/E)^2)
        let g = Grid1D::new(2.0, 8).unwrap();
        let p = DualCouplingParams::new(1.0, 0.05).unwrap();
        let u = RealField::constant(&g, 1.0).unwrap();
        let dt = 1e-3;
        let stepper = DualStepper::new(&u, 0.05, &phys(), dt).unwrap();
        let mut psi = ComplexField::from_fn(&g, |_| Complex64::new(0.0, 0.025f64.exp())).unwrap();
        let mut worst: f64 = 0.0;
        for s in 1..=9425 {
            psi = stepper.apply(&psi, s).unwrap();
            let t = s as f64 * dt;
            let m = mass_oscillation(&p, &phys(), 1.0, t);
            worst = worst.max((psi.values()[0].norm_sqr() - m).abs() / m);
        }
        assert!(worst < 5e-3, "{worst}");
    }

    #[test]
    fn dual_step_is_real_linear() {
        let g = Grid1D::new(10.0, 64).unwrap();
        let u = RealField::from_fn(&g, |x| 0.1 * x * x).unwrap();
        let a = periodic_state(&g);
        let b = ComplexField::from_fn(&g, |x| Complex64::new(0.0, (-(x - 1.0) * (x - 1.0)).exp())).unwrap();
        let (alpha, beta) = (0.7, -1.9);
        let comb = a.zip_map(&b, |p, q| alpha * p + beta * q).unwrap();
        let lhs = step_dual_schrodinger(&comb, &u, 0.3, &phys(), 0.05).unwrap();
        let sa = step_dual_schrodinger(&a, &u, 0.3, &phys(), 0.05).unwrap();
        let sb = step_dual_schrodinger(&b, &u, 0.3, &phys(), 0.05).unwrap();
        for j in 0..64 {
            let rhs = alpha * sa.values()[j] + beta * sb.values()[j];
            assert!((lhs.values()[j] - rhs).norm() < 1e-12);
        }
        // multiplication by i does not commute with the step
        let ia = a.scale(Complex64::new(0.0, 1.0));
        let s_ia = step_dual_schrodinger(&ia, &u, 0.3, &phys(), 0.05).unwrap();
        let diff: f64 = (0..64).map(|j| (s_ia.values()[j] - Complex64::i() * sa.values()[j]).norm()).fold(0.0, f64::max);
        assert!(diff > 1e-3);
    }

    #[test]
    fn unitary_series_has_small_residual() {
        let g = Grid1D::new(40.0, 256).unwrap();
        let psi0 = ComplexField::from_fn(&g, |x| Complex64::new(-x * x / 4.0, 0.8 * x).exp())
            .unwrap()
            .normalized()
            .unwrap();
        let u = RealField::zeros(&g);
        let dt = 1e-3;
        let mut series = vec![psi0];
        for _ in 0..2 {
            let next = step_unitary(series.last().unwrap(), &u, &phys(), dt).unwrap();
            series.push(next);
        }
        let s: [ComplexField; 3] = [series[0].clone(), series[1].clone(), series[2].clone()];
        let r = teleportation_ns_residual(&s, dt, &u, 0.0, &phys(), 1e-12).unwrap();
        assert!(r.max_exact < 1e-4, "{}", r.max_exact);
        assert!((r.max_exact - r.max_linearized).abs() < 1e-15);
        assert_eq!(r.darcy_magnitude, 0.0);
        assert!(norm_squared(&series[2]) > 0.99);
    }

    #[test]
    fn homogeneous_series_within_linearization_domain() {
        let g = Grid1D::new(2.0, 8).unwrap();
        let eps = 0.05;
        let u = RealField::constant(&g, 1.0).unwrap();
        let dt = 1e-4;
        let stepper = DualStepper::new(&u, eps, &phys(), dt).unwrap();
        let mut psi = ComplexField::from_fn(&g, |_| Complex64::new(1.0, 0.0)).unwrap();
        let mut hist = Vec::new();
        for s in 1..=1001 {
            psi = stepper.apply(&psi, s).unwrap();
            if s >= 999 {
                hist.push(psi.clone());
            }
        }
        let series: [ComplexField; 3] = [hist[0].clone(), hist[1].clone(), hist[2].clone()];
        let r = teleportation_ns_residual(&series, dt, &u, eps, &phys(), 1e-8).unwrap();
        assert!(!r.linearization_violated);
        assert!(r.max_exact < 1e-6, "{}", r.max_exact);
        assert!(r.max_linearized < 5.0 * eps * eps, "{}", r.max_linearized);
        assert!(r.max_linearized > r.max_exact);
    }

    #[test]
    fn late_phase_is_flagged() {
        let g = Grid1D::new(2.0, 8).unwrap();
        let u = RealField::constant(&g, 1.0).unwrap();
        let s: [ComplexField; 3] = std::array::from_fn(|k| {
            let t = 2.0 + k as f64 * 1e-3;
            ComplexField::from_fn(&g, |_| Complex64::new(0.0, -t).exp()).unwrap()
        });
        let r = teleportation_ns_residual(&s, 1e-3, &u, 0.0, &phys(), 1e-8).unwrap();
        assert!(r.linearization_violated);
    }

    #[test]
    fn darcy_with_imaginary_coupling_is_friction() {
        let g = Grid1D::new(4.0, 16).unwrap();
        let v = RealField::from_fn(&g, |x| x.sin()).unwrap();
        let p = PhysicalParams::new(1.0, 2.0, 0.0, 1.0).unwrap();
        let b = 3.0;
        let eps = Complex64::new(0.0, p.quantum_diffusion() * b);
        let d = darcy_term(eps, &v, &p);
        for (z, vv) in d.values().iter().zip(v.values()) {
            assert!((z - Complex64::new(b * vv / 2.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn antiderivative_of_cosine_plus_constant() {
        let g = Grid1D::new(2.0 * PI, 32).unwrap();
        let f = RealField::from_fn(&g, |x| 0.5 + x.cos()).unwrap();
        let a = antiderivative(&f);
        let x0 = g.origin();
        for j in 0..32 {
            let x = g.x(j);
            let exact = 0.5 * (x - x0) + x.sin() - x0.sin();
            assert!((a.values()[j] - exact).abs() < 1e-12);
        }
    }
}
