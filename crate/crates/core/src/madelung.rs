//! Hydrodynamic image of a wavefunction.
//!
//! `psi = exp(i S / hbar)` with complex action `S = S_re + i S_im`. The
//! complex velocity `W = grad S / m` splits into the hydrodynamic velocity
//! `V` and the osmotic part `-(hbar/2m) grad ln rho`; `Q` is the Bohm
//! potential. Quantities that divide by the field or take its logarithm
//! require a node floor.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, PhysicalParams, RealField};

/// Default floor below which amplitudes/densities count as nodes.
pub const DEFAULT_FLOOR: f64 = 1e-30;

/// Masked points may carry at most this fraction of the total mass.
pub const MASKED_MASS_LIMIT: f64 = 1e-9;

/// A field that is only meaningful where `mask` is true; masked-out
/// samples are stored as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedField {
    pub field: RealField,
    pub mask: Vec<bool>,
}

impl MaskedField {
    /// Largest absolute value over the unmasked points.
    pub fn max_abs_unmasked(&self) -> f64 {
        self.field
            .values()
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold(0.0, |acc, (v, _)| acc.max(v.abs()))
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Points where `rho > relative * max(rho)`. Errors if the excluded points
/// carry more than [`MASKED_MASS_LIMIT`] of the total mass.
pub fn occupied_mask(rho: &RealField, relative: f64) -> Result<Vec<bool>> {
    let max = rho.values().iter().cloned().fold(0.0, f64::max);
    let threshold = relative * max;
    let mask: Vec<bool> = rho.values().iter().map(|&r| r > threshold).collect();
    let total: f64 = rho.values().iter().map(|r| r.max(0.0)).sum();
    let mut excluded = 0.0;
    let mut worst = (0usize, 0.0f64);
    for (j, (&r, &m)) in rho.values().iter().zip(&mask).enumerate() {
        if !m {
            excluded += r.max(0.0);
            if r > worst.1 {
                worst = (j, r);
            }
        }
    }
    if total > 0.0 && excluded > MASKED_MASS_LIMIT * total {
        return Err(Error::NodeEncountered { index: worst.0, value: worst.1, floor: threshold });
    }
    Ok(mask)
}

fn check_amplitude(psi: &ComplexField, floor: f64) -> Result<()> {
    for (index, v) in psi.values().iter().enumerate() {
        let a = v.norm();
        if !(a > floor) {
            return Err(Error::NodeEncountered { index, value: a, floor });
        }
    }
    Ok(())
}

fn check_density(rho: &RealField, floor: f64) -> Result<()> {
    for (index, &r) in rho.values().iter().enumerate() {
        if !(r > floor) {
            return Err(Error::NodeEncountered { index, value: r, floor });
        }
    }
    Ok(())
}

/// Mass density `rho = m |psi|^2`.
pub fn density(psi: &ComplexField, params: &PhysicalParams) -> RealField {
    let m = params.mass;
    RealField::from_parts(psi.grid(), psi.values().iter().map(|v| m * v.norm_sqr()).collect())
}

/// Complex action split into `(S_re, S_im)`.
///
/// `S_im = -hbar ln|psi|`; `S_re = hbar * phase`, unwrapped along the grid
/// with the left-edge gauge `S_re(x0)` in `(-pi hbar, pi hbar]`.
pub fn eikonal_action(psi: &ComplexField, params: &PhysicalParams, floor: f64) -> Result<(RealField, RealField)> {
    check_amplitude(psi, floor)?;
    let hbar = params.hbar;
    let mut phase = Vec::with_capacity(psi.len());
    let mut prev_arg = 0.0;
    let mut acc = 0.0;
    for (j, v) in psi.values().iter().enumerate() {
        let arg = v.arg();
        if j == 0 {
            acc = arg;
        } else {
            let mut d = arg - prev_arg;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d <= -PI {
                d += 2.0 * PI;
            }
            acc += d;
        }
        prev_arg = arg;
        phase.push(hbar * acc);
    }
    let s_im = psi.values().iter().map(|v| -hbar * v.norm().ln()).collect();
    Ok((RealField::from_parts(psi.grid(), phase), RealField::from_parts(psi.grid(), s_im)))
}

/// Rebuilds `exp(i S / hbar)` from the two action parts.
pub fn wavefunction_from_action(s_re: &RealField, s_im: &RealField, params: &PhysicalParams) -> Result<ComplexField> {
    let hbar = params.hbar;
    let values = s_re
        .values()
        .iter()
        .zip(s_im.values())
        .map(|(&r, &i)| (Complex64::new(-i, r) / hbar).exp())
        .collect();
    ComplexField::new(s_re.grid(), values)
}

/// `grad psi / psi` at every point; requires `|psi| > floor`.
fn log_gradient(psi: &ComplexField, floor: f64) -> Result<Vec<Complex64>> {
    check_amplitude(psi, floor)?;
    let d = psi.gradient()?;
    Ok(d.values().iter().zip(psi.values()).map(|(dp, p)| dp / p).collect())
}

/// Complex hydrodynamic velocity `W = grad S / m = (hbar / i m) grad psi / psi`,
/// returned as `(W_re, W_im)` with `W_re = V` and `W_im = -(hbar/2m) grad ln rho`.
pub fn complex_velocity(psi: &ComplexField, params: &PhysicalParams, floor: f64) -> Result<(RealField, RealField)> {
    let g = log_gradient(psi, floor)?;
    let c = params.hbar / params.mass;
    let re = g.iter().map(|z| c * z.im).collect();
    let im = g.iter().map(|z| -c * z.re).collect();
    Ok((RealField::from_parts(psi.grid(), re), RealField::from_parts(psi.grid(), im)))
}

/// Hydrodynamic velocity evaluated as `(i hbar / 2m) grad ln(conj(psi) / psi)`,
/// kept complex so callers can confirm the imaginary part vanishes.
pub fn velocity_from_log_ratio(psi: &ComplexField, params: &PhysicalParams, floor: f64) -> Result<ComplexField> {
    check_amplitude(psi, floor)?;
    let conj = psi.map(|v| v.conj())?;
    let d_conj = conj.gradient()?;
    let d = psi.gradient()?;
    let coef = Complex64::new(0.0, params.quantum_diffusion());
    let values = (0..psi.len())
        .map(|j| coef * (d_conj.values()[j] / conj.values()[j] - d.values()[j] / psi.values()[j]))
        .collect();
    Ok(ComplexField::from_parts(psi.grid(), values))
}

/// Hydrodynamic velocity on the occupied region only; elsewhere zero.
pub fn hydro_velocity_masked(psi: &ComplexField, params: &PhysicalParams, relative: f64) -> Result<MaskedField> {
    let rho = psi.modulus_squared();
    let mask = occupied_mask(&rho, relative)?;
    let d = psi.gradient()?;
    let c = params.hbar / params.mass;
    let values = (0..psi.len())
        .map(|j| {
            if mask[j] {
                let p = psi.values()[j];
                c * (p.conj() * d.values()[j]).im / p.norm_sqr()
            } else {
                0.0
            }
        })
        .collect();
    Ok(MaskedField { field: RealField::from_parts(psi.grid(), values), mask })
}

/// Bohm potential `Q = -(hbar^2 / 2m) lap(sqrt rho) / sqrt rho`.
pub fn quantum_potential(rho: &RealField, params: &PhysicalParams, floor: f64) -> Result<RealField> {
    check_density(rho, floor)?;
    let amp = rho.map(f64::sqrt)?;
    let lap = amp.laplacian()?;
    let c = -params.hbar * params.hbar / (2.0 * params.mass);
    Ok(RealField::from_parts(
        rho.grid(),
        lap.values().iter().zip(amp.values()).map(|(l, a)| c * l / a).collect(),
    ))
}

/// Bohm potential on the occupied region `rho > relative * max(rho)`.
pub fn quantum_potential_masked(rho: &RealField, params: &PhysicalParams, relative: f64) -> Result<MaskedField> {
    let mask = occupied_mask(rho, relative)?;
    let amp = rho.map(|r| r.max(0.0).sqrt())?;
    let lap = amp.laplacian()?;
    let c = -params.hbar * params.hbar / (2.0 * params.mass);
    let values = (0..rho.len())
        .map(|j| if mask[j] { c * lap.values()[j] / amp.values()[j] } else { 0.0 })
        .collect();
    Ok(MaskedField { field: RealField::from_parts(rho.grid(), values), mask })
}

/// Bohm force `dQ/dx` on the occupied region, formed pointwise from
/// spectral derivatives of `rho`:
/// `Q = -(hbar^2/2m) (rho''/2rho - rho'^2/4rho^2)`.
pub fn quantum_force_masked(rho: &RealField, params: &PhysicalParams, relative: f64) -> Result<MaskedField> {
    let mask = occupied_mask(rho, relative)?;
    let d = rho.spectral_derivatives(&[1, 2, 3])?;
    let (d1, d2, d3) = (d[0].values(), d[1].values(), d[2].values());
    let c = -params.hbar * params.hbar / (2.0 * params.mass);
    let values = (0..rho.len())
        .map(|j| {
            if !mask[j] {
                return 0.0;
            }
            let r = rho.values()[j];
            c * (d3[j] / (2.0 * r) - d1[j] * d2[j] / (r * r) + d1[j] * d1[j] * d1[j] / (2.0 * r * r * r))
        })
        .collect();
    Ok(MaskedField { field: RealField::from_parts(rho.grid(), values), mask })
}

/// Effective diffusion `D - Dq^2 / D = D + hbar^2 / (4 m^2 D)`; minimal
/// (equal to `hbar / m`) at `D = hbar / 2m`.
pub fn effective_diffusion(diffusion: f64, params: &PhysicalParams) -> Result<f64> {
    if !(diffusion.is_finite() && diffusion > 0.0) {
        return Err(Error::Domain(format!("effective diffusion needs D > 0, got {diffusion}")));
    }
    Ok(diffusion - params.quantum_diffusion_squared() / diffusion)
}

/// Real velocity with osmotic structure, `V = (Dq^2 / D) grad ln rho`.
pub fn osmotic_real_velocity(
    rho: &RealField,
    diffusion: f64,
    params: &PhysicalParams,
    floor: f64,
) -> Result<RealField> {
    if !(diffusion.is_finite() && diffusion > 0.0) {
        return Err(Error::Domain(format!("osmotic velocity needs D > 0, got {diffusion}")));
    }
    check_density(rho, floor)?;
    let d = rho.gradient()?;
    let c = params.quantum_diffusion_squared() / diffusion;
    Ok(RealField::from_parts(
        rho.grid(),
        d.values().iter().zip(rho.values()).map(|(g, r)| c * g / r).collect(),
    ))
}

/// Surface-tension change `Dq^2 d(rho)/dx` at a grid index.
///
/// The source relation mixes a tangential derivative with a normal
/// velocity component; in 1D both collapse onto the single axis.
pub fn marangoni_delta_sigma(rho: &RealField, index: usize, params: &PhysicalParams) -> Result<f64> {
    if index >= rho.len() {
        return Err(Error::IndexOutOfRange { index, len: rho.len() });
    }
    let d = rho.gradient()?;
    Ok(params.quantum_diffusion_squared() * d.values()[index])
}

/// Continuity residual `rho_t + grad(rho V)`.
pub fn continuity_residual(rho_t: &RealField, rho: &RealField, velocity: &RealField) -> Result<RealField> {
    let flux = rho.zip_map(velocity, |r, v| r * v)?;
    let div = flux.gradient()?;
    rho_t.zip_map(&div, |a, b| a + b)
}

/// Right-hand side of the convective diffusion equation,
/// `-grad(rho V) + D lap(rho)`.
pub fn convective_diffusion_rate(rho: &RealField, velocity: &RealField, diffusion: f64) -> Result<RealField> {
    let flux = rho.zip_map(velocity, |r, v| r * v)?;
    let div = flux.gradient()?;
    let lap = rho.laplacian()?;
    div.zip_map(&lap, |a, b| -a + diffusion * b)
}

/// Residual fields of the real quantum Navier-Stokes pair, evaluated at the
/// middle snapshot of a three-point time series.
#[derive(Debug, Clone)]
pub struct NavierStokesResidual {
    /// `dV/dt + V dV/dx + d(U + Q)/dx / m - D d2V/dx2`
    pub momentum: MaskedField,
    /// `drho/dt + d(rho V)/dx - D lap(rho)`
    pub density: RealField,
    /// Largest `|dU/dx| / m` over the occupied region, a natural force scale.
    pub force_scale: f64,
}

/// Pointwise velocity and Bohm-force fields built from spectral derivatives
/// of `psi` itself, so no masked field is ever differentiated.
struct LocalHydro {
    velocity: Vec<f64>,
    velocity_x: Vec<f64>,
    velocity_xx: Vec<f64>,
    /// `dQ/dx`
    bohm_force: Vec<f64>,
    /// `hbar Im(conj(psi) psi')`, equal to `rho V`
    current: Vec<f64>,
}

fn local_hydro(psi: &ComplexField, params: &PhysicalParams, mask: &[bool]) -> Result<LocalHydro> {
    let d = psi.spectral_derivatives(&[1, 2, 3])?;
    let (d1, d2, d3) = (d[0].values(), d[1].values(), d[2].values());
    let c = params.hbar / params.mass;
    let cq = -params.hbar * params.hbar / (2.0 * params.mass);
    let n_pts = psi.len();
    let mut out = LocalHydro {
        velocity: vec![0.0; n_pts],
        velocity_x: vec![0.0; n_pts],
        velocity_xx: vec![0.0; n_pts],
        bohm_force: vec![0.0; n_pts],
        current: vec![0.0; n_pts],
    };
    for j in 0..n_pts {
        let p = psi.values()[j];
        out.current[j] = params.hbar * (p.conj() * d1[j]).im;
        if !mask[j] {
            continue;
        }
        let n = p.norm_sqr();
        let n1 = 2.0 * (p.conj() * d1[j]).re;
        let n2 = 2.0 * (p.conj() * d2[j]).re + 2.0 * d1[j].norm_sqr();
        let n3 = 2.0 * (p.conj() * d3[j]).re + 6.0 * (d1[j].conj() * d2[j]).re;
        // g = n V and its derivatives
        let g = c * (p.conj() * d1[j]).im;
        let g1 = c * (p.conj() * d2[j]).im;
        let g2 = c * ((d1[j].conj() * d2[j]).im + (p.conj() * d3[j]).im);
        let v = g / n;
        let v1 = (g1 - n1 * v) / n;
        let v2 = (g2 - n2 * v - 2.0 * n1 * v1) / n;
        out.velocity[j] = v;
        out.velocity_x[j] = v1;
        out.velocity_xx[j] = v2;
        // Q = cq (n''/2n - n'^2/4n^2)
        out.bohm_force[j] = cq * (n3 / (2.0 * n) - n1 * n2 / (n * n) + n1 * n1 * n1 / (2.0 * n * n * n));
    }
    Ok(out)
}

/// Residuals of the momentum and density equations for a wavefunction series
/// `[psi(t - dt), psi(t), psi(t + dt)]`.
///
/// `potential_gradient` is `dU/dx`; pass it analytically when `U` is not
/// periodic on the grid. Points with `|psi|^2 <= relative * max|psi|^2` in
/// any snapshot are masked.
pub fn navier_stokes_residual(
    series: &[ComplexField; 3],
    dt: f64,
    potential_gradient: &RealField,
    diffusion: f64,
    params: &PhysicalParams,
    relative: f64,
) -> Result<NavierStokesResidual> {
    let grid = series[1].grid();
    if series.iter().any(|p| p.grid() != grid) || potential_gradient.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if !(dt > 0.0) {
        return Err(Error::Domain("time step must be positive".into()));
    }
    let masks = series
        .iter()
        .map(|p| occupied_mask(&p.modulus_squared(), relative))
        .collect::<Result<Vec<_>>>()?;
    let mask: Vec<bool> = (0..grid.points()).map(|j| masks.iter().all(|m| m[j])).collect();
    let prev = local_hydro(&series[0], params, &mask)?;
    let mid = local_hydro(&series[1], params, &mask)?;
    let next = local_hydro(&series[2], params, &mask)?;
    let m = params.mass;
    let du = potential_gradient.values();

    let mut momentum = vec![0.0; grid.points()];
    let mut force_scale: f64 = 0.0;
    for j in 0..grid.points() {
        if !mask[j] {
            continue;
        }
        let v_t = (next.velocity[j] - prev.velocity[j]) / (2.0 * dt);
        momentum[j] = v_t + mid.velocity[j] * mid.velocity_x[j] + (du[j] + mid.bohm_force[j]) / m
            - diffusion * mid.velocity_xx[j];
        force_scale = force_scale.max(du[j].abs() / m);
    }

    let rho = density(&series[1], params);
    let rho_prev = density(&series[0], params);
    let rho_next = density(&series[2], params);
    let div = RealField::from_parts(grid, mid.current).gradient()?;
    let lap = rho.laplacian()?;
    let density_res = RealField::from_parts(
        grid,
        (0..grid.points())
            .map(|j| {
                (rho_next.values()[j] - rho_prev.values()[j]) / (2.0 * dt) + div.values()[j]
                    - diffusion * lap.values()[j]
            })
            .collect(),
    );

    Ok(NavierStokesResidual {
        momentum: MaskedField { field: RealField::from_parts(grid, momentum), mask },
        density: density_res,
        force_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, Grid1D};

    fn params() -> PhysicalParams {
        PhysicalParams::default()
    }

    fn gaussian_psi(grid: &Grid1D, sigma: f64, center: f64, k0: f64) -> ComplexField {
        ComplexField::from_fn(grid, |x| {
            let amp = (2.0 * PI * sigma * sigma).powf(-0.25) * (-(x - center).powi(2) / (4.0 * sigma * sigma)).exp();
            Complex64::from_polar(amp, k0 * x)
        })
        .unwrap()
    }

    #[test]
    fn density_examples() {
        let g = Grid1D::new(2.0 * PI, 32).unwrap();
        let pw = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, 3.0 * x)).unwrap();
        assert!(density(&pw, &params()).values().iter().all(|&r| (r - 1.0).abs() < 1e-15));
        let zero = ComplexField::zeros(&g);
        assert!(density(&zero, &params()).values().iter().all(|&r| r == 0.0));

        let g = Grid1D::new(30.0, 256).unwrap();
        let p2 = PhysicalParams { mass: 2.0, ..params() };
        let rho = density(&gaussian_psi(&g, 1.0, 0.0, 0.0), &p2);
        assert!((integrate(&rho) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn eikonal_of_plane_wave_and_gaussian() {
        let g = Grid1D::new(2.0 * PI, 64).unwrap();
        let k = 5.0;
        let pw = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, k * x)).unwrap();
        let p = PhysicalParams { hbar: 0.7, ..params() };
        let (s_re, s_im) = eikonal_action(&pw, &p, DEFAULT_FLOOR).unwrap();
        let offset = s_re.values()[0] - p.hbar * k * g.x(0);
        for (j, x) in g.coordinates().into_iter().enumerate() {
            assert!((s_re.values()[j] - p.hbar * k * x - offset).abs() < 1e-12);
            assert!(s_im.values()[j].abs() < 1e-14);
        }
        assert!(s_re.values()[0] > -PI * p.hbar && s_re.values()[0] <= PI * p.hbar);

        let g = Grid1D::new(12.0, 128).unwrap();
        let gs = gaussian_psi(&g, 1.0, 0.0, 0.0);
        let (s_re, s_im) = eikonal_action(&gs, &p, DEFAULT_FLOOR).unwrap();
        assert!(s_re.max_abs() < 1e-14);
        for (v, s) in gs.values().iter().zip(s_im.values()) {
            assert!((s + p.hbar * v.re.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn eikonal_round_trip() {
        let g = Grid1D::new(16.0, 256).unwrap();
        let psi = gaussian_psi(&g, 1.5, 0.5, 7.3);
        let p = params();
        let (s_re, s_im) = eikonal_action(&psi, &p, DEFAULT_FLOOR).unwrap();
        let back = wavefunction_from_action(&s_re, &s_im, &p).unwrap();
        let err = psi.values().iter().zip(back.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "round trip error {err}");
    }

    #[test]
    fn eikonal_reports_node_index() {
        let g = Grid1D::new(1.0, 16).unwrap();
        let mut v = vec![Complex64::new(1.0, 0.0); 16];
        v[5] = Complex64::new(0.0, 0.0);
        let psi = ComplexField::new(&g, v).unwrap();
        match eikonal_action(&psi, &params(), DEFAULT_FLOOR) {
            Err(Error::NodeEncountered { index, .. }) => assert_eq!(index, 5),
            other => panic!("expected node error, got {other:?}"),
        }
        assert!(matches!(complex_velocity(&psi, &params(), DEFAULT_FLOOR), Err(Error::NodeEncountered { index: 5, .. })));
    }

    #[test]
    fn complex_velocity_plane_wave() {
        let g = Grid1D::new(2.0 * PI, 64).unwrap();
        let p = PhysicalParams { hbar: 1.3, mass: 0.8, ..params() };
        let pw = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, 4.0 * x)).unwrap();
        let (re, im) = complex_velocity(&pw, &p, DEFAULT_FLOOR).unwrap();
        let expect = p.hbar * 4.0 / p.mass;
        assert!(re.values().iter().all(|v| (v - expect).abs() < 1e-12));
        assert!(im.max_abs() < 1e-12);
    }

    #[test]
    fn complex_velocity_matches_action_gradient() {
        // psi = exp(a cos kx + i b sin kx): both action parts are periodic
        let g = Grid1D::new(2.0 * PI, 64).unwrap();
        let (a, b) = (0.6, 1.3);
        let p = PhysicalParams { hbar: 0.9, mass: 1.7, ..params() };
        let psi = ComplexField::from_fn(&g, |x| Complex64::new(a * x.cos(), b * x.sin()).exp()).unwrap();
        let (re, im) = complex_velocity(&psi, &p, DEFAULT_FLOOR).unwrap();
        let (s_re, s_im) = eikonal_action(&psi, &p, DEFAULT_FLOOR).unwrap();
        let (dr, di) = (s_re.gradient().unwrap(), s_im.gradient().unwrap());
        for (j, x) in g.coordinates().into_iter().enumerate() {
            assert!((re.values()[j] - dr.values()[j] / p.mass).abs() < 1e-10);
            assert!((im.values()[j] - di.values()[j] / p.mass).abs() < 1e-10);
            assert!((re.values()[j] - p.hbar * b * x.cos() / p.mass).abs() < 1e-12);
            assert!((im.values()[j] - p.hbar * a * x.sin() / p.mass).abs() < 1e-12);
        }
    }

    #[test]
    fn osmotic_part_of_gaussian() {
        let g = Grid1D::new(30.0, 256).unwrap();
        let sigma: f64 = 1.2;
        let psi = gaussian_psi(&g, sigma, 0.0, 0.0);
        let p = params();
        let (re, im) = complex_velocity(&psi, &p, DEFAULT_FLOOR).unwrap();
        for (j, x) in g.coordinates().into_iter().enumerate() {
            if x.abs() < 6.0 {
                assert!(re.values()[j].abs() < 1e-10);
                // -(hbar/2m) d ln rho/dx = (hbar/2m) x / sigma^2
                assert!((im.values()[j] - p.hbar / (2.0 * p.mass) * x / (sigma * sigma)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn log_ratio_formula_agrees_with_current() {
        let g = Grid1D::new(20.0, 256).unwrap();
        let p = params();
        let psi = ComplexField::from_fn(&g, |x| {
            let a = (-(x - 1.0f64).powi(2) / 4.0).exp() + 0.5 * (-(x + 2.0f64).powi(2) / 2.0).exp();
            Complex64::from_polar(a, 1.5 * x + 0.2 * x * x)
        })
        .unwrap();
        let v = hydro_velocity_masked(&psi, &p, 1e-14).unwrap();
        let w = velocity_from_log_ratio(&psi, &p, DEFAULT_FLOOR).unwrap();
        let rho = density(&psi, &p);
        for j in 0..g.points() {
            if rho.values()[j] > 1e-6 {
                assert!((w.values()[j].re - v.field.values()[j]).abs() < 1e-9);
                assert!(w.values()[j].im.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quantum_potential_examples() {
        let g = Grid1D::new(10.0, 64).unwrap();
        let p = params();
        let flat = RealField::constant(&g, 0.3).unwrap();
        assert!(quantum_potential(&flat, &p, DEFAULT_FLOOR).unwrap().max_abs() < 1e-13);

        let g = Grid1D::new(16.0, 256).unwrap();
        let s2: f64 = 0.8;
        let rho = RealField::from_fn(&g, |x| (-x * x / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt()).unwrap();
        let q = quantum_potential(&rho, &p, DEFAULT_FLOOR).unwrap();
        for (j, x) in g.coordinates().into_iter().enumerate() {
            if x.abs() < 4.0 {
                let exact = p.hbar * p.hbar / (4.0 * p.mass * s2) * (1.0 - x * x / (2.0 * s2));
                assert!(((q.values()[j] - exact) / exact.abs().max(1e-3)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn harmonic_ground_state_satisfies_q_plus_u_equals_e() {
        let g = Grid1D::new(20.0, 128).unwrap();
        let p = PhysicalParams { hbar: 1.0, mass: 1.3, ..params() };
        let omega = 0.9;
        let s2 = p.hbar / (2.0 * p.mass * omega);
        let rho = RealField::from_fn(&g, |x| p.mass * (-x * x / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt()).unwrap();
        let q = quantum_potential_masked(&rho, &p, 1e-10).unwrap();
        let e = 0.5 * p.hbar * omega;
        for (j, x) in g.coordinates().into_iter().enumerate() {
            if q.mask[j] && x.abs() < 5.0 {
                let u = 0.5 * p.mass * omega * omega * x * x;
                assert!((q.field.values()[j] + u - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn quantum_force_of_harmonic_ground_state_balances_the_trap() {
        let g = Grid1D::new(20.0, 128).unwrap();
        let p = params();
        let omega = 1.4;
        let s2 = p.hbar / (2.0 * p.mass * omega);
        let rho = RealField::from_fn(&g, |x| (-x * x / (2.0 * s2)).exp()).unwrap();
        let f = quantum_force_masked(&rho, &p, 1e-12).unwrap();
        for (j, x) in g.coordinates().into_iter().enumerate() {
            if x.abs() < 3.0 {
                assert!((f.field.values()[j] + p.mass * omega * omega * x).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn effective_diffusion_minimum() {
        let p = params();
        assert!((effective_diffusion(0.5, &p).unwrap() - 1.0).abs() < 1e-15);
        assert!((effective_diffusion(1.0, &p).unwrap() - 1.25).abs() < 1e-15);
        assert!(effective_diffusion(0.0, &p).is_err());
        assert!(effective_diffusion(-1.0, &p).is_err());

        let step = 0.01;
        let scan: Vec<f64> = (0..=495).map(|i| 0.05 + step * i as f64).collect();
        let (best, _) = scan
            .iter()
            .map(|&d| (d, effective_diffusion(d, &p).unwrap()))
            .fold((0.0, f64::INFINITY), |acc, (d, v)| if v < acc.1 { (d, v) } else { acc });
        assert!((best - 0.5).abs() <= step);
    }

    #[test]
    fn effective_diffusion_is_convex() {
        let p = PhysicalParams { hbar: 1.0, mass: 2.0, ..params() };
        let h = 1e-3;
        for i in 1..400 {
            let d = 0.01 * i as f64;
            let f = |d| effective_diffusion(d, &p).unwrap();
            assert!(f(d + h) - 2.0 * f(d) + f(d - h) > 0.0);
        }
        let min_at = p.hbar / (2.0 * p.mass);
        assert!((effective_diffusion(min_at, &p).unwrap() - p.hbar / p.mass).abs() < 1e-14);
    }

    #[test]
    fn osmotic_velocity_examples() {
        let p = params();
        let g = Grid1D::new(16.0, 128).unwrap();
        let flat = RealField::constant(&g, 2.0).unwrap();
        assert!(osmotic_real_velocity(&flat, 0.5, &p, DEFAULT_FLOOR).unwrap().max_abs() < 1e-13);
        assert!(osmotic_real_velocity(&flat, 0.0, &p, DEFAULT_FLOOR).is_err());

        let g = Grid1D::new(30.0, 256).unwrap();
        let s2: f64 = 1.5;
        let d = 0.3;
        let rho = RealField::from_fn(&g, |x| (-x * x / (2.0 * s2)).exp()).unwrap();
        let v = osmotic_real_velocity(&rho, d, &p, 1e-40).unwrap();
        for (j, x) in g.coordinates().into_iter().enumerate() {
            if x.abs() < 5.0 {
                let exact = p.hbar * p.hbar / (4.0 * p.mass * p.mass * d) * x / s2;
                assert!((v.values()[j] - exact).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn convective_diffusion_with_osmotic_velocity_is_effective_diffusion() {
        let p = params();
        let g = Grid1D::new(2.0 * PI, 64).unwrap();
        let d = 0.7;
        let rho = RealField::from_fn(&g, |x| 1.0 + 0.3 * x.cos() + 0.1 * (2.0 * x).sin()).unwrap();
        let v = osmotic_real_velocity(&rho, d, &p, DEFAULT_FLOOR).unwrap();
        let composite = convective_diffusion_rate(&rho, &v, d).unwrap();
        let eff = effective_diffusion(d, &p).unwrap();
        let direct = rho.laplacian().unwrap();
        for (a, b) in composite.values().iter().zip(direct.values()) {
            assert!((a - eff * b).abs() < 1e-10);
        }
    }

    #[test]
    fn flat_density_approximation_is_quadratic_in_amplitude() {
        // D rho div V with V from the osmotic law versus Dq^2 lap(rho)
        let p = params();
        let g = Grid1D::new(10.0, 128).unwrap();
        let k = 2.0 * PI / 10.0;
        let d = 0.4;
        let deviation = |a: f64| {
            let rho = RealField::from_fn(&g, |x| 1.0 + a * (k * x).cos()).unwrap();
            let v = osmotic_real_velocity(&rho, d, &p, DEFAULT_FLOOR).unwrap();
            let div = v.gradient().unwrap();
            let lap = rho.laplacian().unwrap();
            (0..g.points())
                .map(|j| (d * rho.values()[j] * div.values()[j] - p.quantum_diffusion_squared() * lap.values()[j]).abs())
                .fold(0.0, f64::max)
        };
        let scale = p.quantum_diffusion_squared().abs() * k * k;
        for a in [0.1, 0.05, 0.02] {
            assert!(deviation(a) <= 1.2 * a * a * scale);
        }
        let ratio = deviation(0.1) / deviation(0.05);
        assert!((3.5..4.5).contains(&ratio), "scaling ratio {ratio}");
    }

    #[test]
    fn marangoni_examples() {
        let p = params();
        let g = Grid1D::new(2.0 * PI, 32).unwrap();
        let flat = RealField::constant(&g, 1.0).unwrap();
        assert!(marangoni_delta_sigma(&flat, 3, &p).unwrap().abs() < 1e-15);
        // rho = sin(x): slope 1 at x = 0, which is index 16 on [-pi, pi)
        let s = RealField::from_fn(&g, f64::sin).unwrap();
        assert!((g.x(16)).abs() < 1e-15);
        assert!((marangoni_delta_sigma(&s, 16, &p).unwrap() + 0.25).abs() < 1e-12);
        assert!(matches!(marangoni_delta_sigma(&s, 32, &p), Err(Error::IndexOutOfRange { .. })));

        let rho = RealField::from_fn(&g, |x| 2.0 + x.cos()).unwrap();
        let d = 0.8;
        let v = osmotic_real_velocity(&rho, d, &p, DEFAULT_FLOOR).unwrap();
        for j in [3, 9, 20] {
            let ds = marangoni_delta_sigma(&rho, j, &p).unwrap();
            let alt = rho.values()[j] * d * v.values()[j];
            assert!(((ds - alt) / ds).abs() < 1e-9);
        }
    }

    #[test]
    fn continuity_residual_trivial_cases() {
        let g = Grid1D::new(2.0 * PI, 32).unwrap();
        let rho = RealField::constant(&g, 1.0).unwrap();
        let v = RealField::constant(&g, 3.0).unwrap();
        let zero = RealField::zeros(&g);
        assert!(continuity_residual(&zero, &rho, &v).unwrap().max_abs() < 1e-13);
        let eig = RealField::from_fn(&g, |x| 1.0 + 0.5 * x.cos()).unwrap();
        assert!(continuity_residual(&zero, &eig, &zero).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn free_packet_continuity_from_time_differences() {
        // free Gaussian evolved exactly in Fourier space
        let g = Grid1D::new(40.0, 512).unwrap();
        let p = params();
        let psi0 = gaussian_psi(&g, 1.0, 0.0, 1.0);
        let k = g.wavenumbers();
        let evolve = |t: f64| {
            let mut hat = psi0.spectrum();
            for (h, &kk) in hat.iter_mut().zip(&k) {
                *h *= Complex64::from_polar(1.0, -p.hbar * kk * kk * t / (2.0 * p.mass));
            }
            crate::grid::ifft(&mut hat);
            ComplexField::new(&g, hat).unwrap()
        };
        let t = 1.5;
        let dt = 1e-4;
        let rho_t = density(&evolve(t + dt), &p).zip_map(&density(&evolve(t - dt), &p), |a, b| (a - b) / (2.0 * dt)).unwrap();
        let psi = evolve(t);
        let rho = density(&psi, &p);
        let v = hydro_velocity_masked(&psi, &p, 1e-12).unwrap();
        let r = continuity_residual(&rho_t, &rho, &v.field).unwrap();
        assert!(r.max_abs() < 1e-4 * rho_t.max_abs(), "{} vs {}", r.max_abs(), rho_t.max_abs());
    }

    #[test]
    fn navier_stokes_residual_of_stationary_and_plane_states() {
        let p = params();
        let omega = 1.0;
        let g = Grid1D::new(20.0, 128).unwrap();
        let s2 = p.hbar / (2.0 * p.mass * omega);
        let e = 0.5 * p.hbar * omega;
        let dt = 1e-3;
        let state = |t: f64| {
            ComplexField::from_fn(&g, |x| {
                Complex64::from_polar((2.0 * PI * s2).powf(-0.25) * (-x * x / (4.0 * s2)).exp(), -e * t / p.hbar)
            })
            .unwrap()
        };
        let du = RealField::from_fn(&g, |x| p.mass * omega * omega * x).unwrap();
        let res = navier_stokes_residual(&[state(-dt), state(0.0), state(dt)], dt, &du, 0.0, &p, 1e-10).unwrap();
        // far tails divide roundoff by tiny densities
        let bulk: Vec<bool> = g.coordinates().iter().map(|x| x.abs() < 3.0).collect();
        let worst = res.momentum.field.values().iter().zip(&bulk).filter(|(_, &b)| b).fold(0.0f64, |m, (v, _)| m.max(v.abs()));
        assert!(worst < 1e-8, "momentum residual {worst}");
        assert!(res.density.max_abs() < 1e-8);

        let g = Grid1D::new(2.0 * PI, 32).unwrap();
        let k = 3.0;
        let pw = |t: f64| {
            ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, k * x - p.hbar * k * k * t / (2.0 * p.mass))).unwrap()
        };
        let zero = RealField::zeros(&g);
        let res = navier_stokes_residual(&[pw(-dt), pw(0.0), pw(dt)], dt, &zero, 0.0, &p, 1e-10).unwrap();
        assert!(res.momentum.max_abs_unmasked() < 1e-10);
        assert!(res.density.max_abs() < 1e-10);
    }

    proptest::proptest! {
        #[test]
        fn effective_diffusion_is_convex_with_its_minimum_at_hbar_over_2m(
            hbar in 0.1f64..3.0, mass in 0.1f64..5.0, d in 0.01f64..10.0, h in 1e-3f64..0.5
        ) {
            let p = PhysicalParams::new(hbar, mass, 0.0, 1.0).unwrap();
            let dq = hbar / (2.0 * mass);
            let x = d * dq;
            let f = |v: f64| effective_diffusion(v, &p).unwrap();
            let step = h * x;
            proptest::prop_assert!(f(x - step) + f(x + step) - 2.0 * f(x) > 0.0);
            proptest::prop_assert!(f(x) >= f(dq) * (1.0 - 1e-14));
            proptest::prop_assert!((f(dq) - hbar / mass).abs() <= 1e-14 * hbar / mass);
        }
    }
}
