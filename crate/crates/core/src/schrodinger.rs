//! Split-step propagation of the Schrodinger equation and its diffusive
//! extensions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fft, ifft, norm_squared, ComplexField, Grid1D, PhysicalParams, RealField};
use crate::madelung::DEFAULT_FLOOR;

/// External potential `U(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Zero,
    /// `U = slope * x`
    Linear { slope: f64 },
    /// `U = m omega^2 (x - center)^2 / 2`
    Harmonic { omega: f64, center: f64 },
    Tabulated(RealField),
}

impl PotentialSpec {
    pub fn harmonic(omega: f64) -> Self {
        PotentialSpec::Harmonic { omega, center: 0.0 }
    }

    /// Samples the potential on `grid`.
    pub fn sample(&self, grid: &Grid1D, params: &PhysicalParams) -> Result<RealField> {
        match self {
            PotentialSpec::Zero => Ok(RealField::zeros(grid)),
            PotentialSpec::Linear { slope } => RealField::from_fn(grid, |x| slope * x),
            PotentialSpec::Harmonic { omega, center } => {
                let c = 0.5 * params.mass * omega * omega;
                RealField::from_fn(grid, |x| c * (x - center) * (x - center))
            }
            PotentialSpec::Tabulated(u) => {
                if u.grid() != grid {
                    return Err(Error::LengthMismatch { expected: grid.points(), actual: u.len() });
                }
                Ok(u.clone())
            }
        }
    }

    /// `dU/dx`; analytic for the closed forms, spectral for tabulated data.
    pub fn gradient(&self, grid: &Grid1D, params: &PhysicalParams) -> Result<RealField> {
        match self {
            PotentialSpec::Zero => Ok(RealField::zeros(grid)),
            PotentialSpec::Linear { slope } => RealField::constant(grid, *slope),
            PotentialSpec::Harmonic { omega, center } => {
                let c = params.mass * omega * omega;
                RealField::from_fn(grid, |x| c * (x - center))
            }
            PotentialSpec::Tabulated(_) => self.sample(grid, params)?.gradient(),
        }
    }
}

/// Evolution law applied by [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unitary,
    DiffusiveLinear,
    DoebnerGoldin,
}

/// Form of the nonlinear Doebner-Goldin term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoebnerGoldinForm {
    /// `D div(conj(psi) grad psi) / conj(psi)`; the density then obeys
    /// `rho_t = D lap(rho)` exactly and total mass is conserved.
    #[default]
    Divergence,
    /// `D psi lap(ln psi)`; the density loses mass at rate `D int (rho')^2 / rho`.
    LogLaplacian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub steps: usize,
    pub method: Method,
    /// Keep every `stride`-th state (the initial state is always kept).
    pub stride: usize,
    #[serde(default)]
    pub form: DoebnerGoldinForm,
}

impl EvolutionConfig {
    pub fn new(dt: f64, steps: usize, method: Method, stride: usize) -> Result<Self> {
        let cfg = EvolutionConfig { dt, steps, method, stride, form: DoebnerGoldinForm::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if self.stride == 0 {
            return Err(Error::Domain("snapshot stride must be at least 1".into()));
        }
        Ok(())
    }

    /// `dt * kmax^2 * (hbar/2m + D)`.
    pub fn stability_ratio(&self, grid: &Grid1D, params: &PhysicalParams) -> f64 {
        let k = grid.max_wavenumber();
        self.dt * k * k * (params.quantum_diffusion() + params.diffusion)
    }
}

/// Largest dt accepted by the explicit Doebner-Goldin update.
pub fn doebner_goldin_dt_bound(grid: &Grid1D, diffusion: f64) -> f64 {
    let dx = grid.spacing();
    if diffusion > 0.0 {
        0.1 * dx * dx / diffusion
    } else {
        f64::INFINITY
    }
}

/// Precomputed multipliers for repeated linear split steps.
#[derive(Debug, Clone)]
pub struct LinearPropagator {
    grid: Grid1D,
    half_potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
}

impl LinearPropagator {
    /// Strang step for `psi_t = -i H psi / hbar - D k^2 psi` (D from the argument).
    pub fn new(grid: &Grid1D, potential: &RealField, diffusion: f64, params: &PhysicalParams, dt: f64) -> Result<Self> {
        if potential.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if !(diffusion.is_finite() && diffusion >= 0.0) {
            return Err(Error::Domain(format!("diffusion must be non-negative, got {diffusion}")));
        }
        let hbar = params.hbar;
        let half_potential = potential
            .values()
            .iter()
            .map(|u| Complex64::new(0.0, -u * dt / (2.0 * hbar)).exp())
            .collect();
        let kinetic = grid
            .wavenumbers()
            .iter()
            .map(|k| {
                let k2 = k * k;
                Complex64::new(-diffusion * k2 * dt, -hbar * k2 * dt / (2.0 * params.mass)).exp()
            })
            .collect();
        Ok(LinearPropagator { grid: grid.clone(), half_potential, kinetic })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn apply(&self, psi: &ComplexField, step: usize) -> Result<ComplexField> {
        if psi.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut v: Vec<Complex64> = psi.values().iter().zip(&self.half_potential).map(|(a, b)| a * b).collect();
        fft(&mut v);
        for (a, b) in v.iter_mut().zip(&self.kinetic) {
            *a *= b;
        }
        ifft(&mut v);
        for (a, b) in v.iter_mut().zip(&self.half_potential) {
            *a *= b;
        }
        ComplexField::checked_step(&self.grid, v, step)
    }
}

fn warn_if_unnormalized(psi: &ComplexField) {
    let n = norm_squared(psi);
    if (n - 1.0).abs() > 1e-6 {
        eprintln!("warning: state norm^2 = {n:.9} deviates from 1");
    }
}

/// One unitary Strang step.
pub fn step_unitary(psi: &ComplexField, potential: &RealField, params: &PhysicalParams, dt: f64) -> Result<ComplexField> {
    warn_if_unnormalized(psi);
    LinearPropagator::new(psi.grid(), potential, 0.0, params, dt)?.apply(psi, 0)
}

/// One Strang step of the linear diffusive equation; kinetic multiplier
/// `exp[(-i hbar / 2m - D) k^2 dt]`.
pub fn step_diffusive_linear(
    psi: &ComplexField,
    potential: &RealField,
    diffusion: f64,
    params: &PhysicalParams,
    dt: f64,
) -> Result<ComplexField> {
    LinearPropagator::new(psi.grid(), potential, diffusion, params, dt)?.apply(psi, 0)
}

fn check_nodes(psi: &ComplexField, floor: f64) -> Result<()> {
    for (index, v) in psi.values().iter().enumerate() {
        let a = v.norm();
        if !(a > floor) {
            return Err(Error::NodeEncountered { index, value: a, floor });
        }
    }
    Ok(())
}

/// Nonlinear Doebner-Goldin rate `dpsi/dt` for the chosen form.
pub fn doebner_goldin_rate(psi: &ComplexField, diffusion: f64, form: DoebnerGoldinForm, floor: f64) -> Result<ComplexField> {
    check_nodes(psi, floor)?;
    let d = psi.spectral_derivatives(&[1, 2])?;
    let (dpsi, lap) = (&d[0], &d[1]);
    let values = match form {
        DoebnerGoldinForm::Divergence => {
            let flux = ComplexField::from_parts(
                psi.grid(),
                psi.values().iter().zip(dpsi.values()).map(|(p, g)| p.conj() * g).collect(),
            );
            let div = flux.gradient()?;
            div.values().iter().zip(psi.values()).map(|(q, p)| diffusion * q / p.conj()).collect()
        }
        DoebnerGoldinForm::LogLaplacian => psi
            .values()
            .iter()
            .zip(dpsi.values())
            .zip(lap.values())
            .map(|((p, g), l)| diffusion * (l - g * g / p))
            .collect(),
    };
    Ok(ComplexField::from_parts(psi.grid(), values))
}

/// Doebner-Goldin stepper: unitary half steps around an explicit midpoint
/// update of the nonlinear term.
#[derive(Debug, Clone)]
pub struct DoebnerGoldinStepper {
    half: LinearPropagator,
    diffusion: f64,
    dt: f64,
    form: DoebnerGoldinForm,
    floor: f64,
}

impl DoebnerGoldinStepper {
    pub fn new(
        grid: &Grid1D,
        potential: &RealField,
        diffusion: f64,
        params: &PhysicalParams,
        dt: f64,
        form: DoebnerGoldinForm,
    ) -> Result<Self> {
        let bound = doebner_goldin_dt_bound(grid, diffusion);
        if !(dt < bound) {
            return Err(Error::Domain(format!("dt {dt} exceeds the explicit bound 0.1 dx^2 / D = {bound}")));
        }
        let half = LinearPropagator::new(grid, potential, 0.0, params, 0.5 * dt)?;
        Ok(DoebnerGoldinStepper { half, diffusion, dt, form, floor: DEFAULT_FLOOR })
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn apply(&self, psi: &ComplexField, step: usize) -> Result<ComplexField> {
        if self.diffusion != 0.0 {
            check_nodes(psi, self.floor)?;
        }
        let a = self.half.apply(psi, step)?;
        let b = if self.diffusion == 0.0 {
            a
        } else {
            let k1 = doebner_goldin_rate(&a, self.diffusion, self.form, self.floor)?;
            let mid = a.zip_map(&k1, |p, k| p + 0.5 * self.dt * k)?;
            let k2 = doebner_goldin_rate(&mid, self.diffusion, self.form, self.floor)?;
            let next = a.zip_map(&k2, |p, k| p + self.dt * k)?;
            ComplexField::checked_step(&next.grid().clone(), next.into_values(), step)?
        };
        self.half.apply(&b, step)
    }
}

/// One Doebner-Goldin step in the mass-conserving divergence form.
pub fn step_doebner_goldin(
    psi: &ComplexField,
    potential: &RealField,
    diffusion: f64,
    params: &PhysicalParams,
    dt: f64,
) -> Result<ComplexField> {
    DoebnerGoldinStepper::new(psi.grid(), potential, diffusion, params, dt, DoebnerGoldinForm::Divergence)?.apply(psi, 0)
}

/// Snapshots of an evolution run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ComplexField>,
}

/// Runs `config.steps` steps; diffusion is taken from `params.diffusion`.
pub fn evolve(
    psi0: &ComplexField,
    potential: &PotentialSpec,
    params: &PhysicalParams,
    config: &EvolutionConfig,
) -> Result<Trajectory> {
    config.validate()?;
    params.validate()?;
    let grid = psi0.grid();
    let u = potential.sample(grid, params)?;
    let d = params.diffusion;
    enum Stepper {
        Linear(LinearPropagator),
        Nonlinear(DoebnerGoldinStepper),
    }
    let stepper = match config.method {
        Method::Unitary => Stepper::Linear(LinearPropagator::new(grid, &u, 0.0, params, config.dt)?),
        Method::DiffusiveLinear => Stepper::Linear(LinearPropagator::new(grid, &u, d, params, config.dt)?),
        Method::DoebnerGoldin => {
            Stepper::Nonlinear(DoebnerGoldinStepper::new(grid, &u, d, params, config.dt, config.form)?)
        }
    };
    let mut times = vec![0.0];
    let mut states = vec![psi0.clone()];
    let mut psi = psi0.clone();
    for step in 1..=config.steps {
        psi = match &stepper {
            Stepper::Linear(p) => p.apply(&psi, step)?,
            Stepper::Nonlinear(p) => p.apply(&psi, step)?,
        };
        if step % config.stride == 0 || step == config.steps {
            times.push(step as f64 * config.dt);
            states.push(psi.clone());
        }
    }
    Ok(Trajectory { times, states })
}

/// `<H> = int [ (hbar^2/2m)|psi'|^2 + U |psi|^2 ] / int |psi|^2`.
pub fn expectation_energy(psi: &ComplexField, potential: &RealField, params: &PhysicalParams) -> Result<f64> {
    if potential.grid() != psi.grid() {
        return Err(Error::GridMismatch);
    }
    let n = norm_squared(psi);
    if !(n > 0.0) {
        return Err(Error::Domain("energy of a zero state".into()));
    }
    let d = psi.gradient()?;
    let c = params.hbar * params.hbar / (2.0 * params.mass);
    let dx = psi.grid().spacing();
    let e: f64 = d
        .values()
        .iter()
        .zip(psi.values())
        .zip(potential.values())
        .map(|((g, p), u)| c * g.norm_sqr() + u * p.norm_sqr())
        .sum::<f64>()
        * dx;
    Ok(e / n)
}

/// `i hbar D int div(conj(psi) grad psi) dx`; a total divergence, zero on a
/// periodic grid.
pub fn diffusive_term_expectation(psi: &ComplexField, diffusion: f64, params: &PhysicalParams) -> Result<Complex64> {
    let d = psi.gradient()?;
    let flux = ComplexField::from_parts(
        psi.grid(),
        psi.values().iter().zip(d.values()).map(|(p, g)| p.conj() * g).collect(),
    );
    let div = flux.gradient()?;
    let sum: Complex64 = div.values().iter().sum();
    Ok(Complex64::new(0.0, params.hbar * diffusion) * sum * psi.grid().spacing())
}
