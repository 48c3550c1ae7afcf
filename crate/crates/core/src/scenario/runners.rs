//! One function per registered scenario. Each fills tables and checks and
//! returns early with the solver error if a step fails.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::config::{ScenarioConfig, ScenarioKind};
use super::output::{Check, Table};
use crate::density_matrix::{
    ergodic_limit, master_equation_step, time_average, trace_decay_rate, DensityMatrix, EnergySpectrum,
    OscillatorBasis,
};
use crate::dual_space::{
    closed_form_action, closed_form_imag_action, exact_homogeneous_density, integrate_action_odes,
    integrate_action_odes_with_step, mass_period_average, mass_period_average_first_order, DualCouplingParams,
    DualStepper, ActionBranch, approx_wavefunction, action_invariant, mass_oscillation_first_order,
    teleportation_ns_residual,
};
use crate::error::{Error, Result};
use crate::grid::{norm_squared, ComplexField, Grid1D, PhysicalParams, RealField};
use crate::madelung::{density, effective_diffusion};
use crate::numerics::{dominant_angular_frequency, log_log_fit};
use crate::schrodinger::{
    diffusive_term_expectation, expectation_energy, DoebnerGoldinForm, DoebnerGoldinStepper, LinearPropagator,
    PotentialSpec,
};
use crate::smoluchowski::{
    high_temperature_dispersion, thermal_dispersion, thermal_time_of, zero_mean_source_energy,
    zero_temperature_dispersion, zero_temperature_law_lhs, zero_temperature_time_of, QseModel, QseStepper,
    SmoluchowskiState, TeleportationParams,
};
use crate::wigner::{infer_potential, marginal_momentum, marginal_position, momentum_density_of_state, wigner_transform};

pub(crate) type Outcome = (Vec<Table>, Vec<Check>);

/// Safety factor applied to the explicit Smoluchowski bound.
const QSE_SAFETY: f64 = 0.5;

/// Check names registered for each scenario, in report order.
pub fn check_names(kind: ScenarioKind) -> &'static [&'static str] {
    match kind {
        ScenarioKind::FreePacket => {
            &["norm_conservation", "energy_conservation", "spreading_law", "group_velocity", "diffusive_term_expectation"]
        }
        ScenarioKind::DampedPlaneWave => {
            &["amplitude_law", "phase_law", "effective_diffusion_minimizer", "effective_diffusion_minimum"]
        }
        ScenarioKind::DoebnerGoldin => &["mass_conservation", "diffusive_term_expectation"],
        ScenarioKind::WignerCheck => &[
            "position_marginal",
            "momentum_marginal",
            "superposition_negativity",
            "potential_reconstruction",
            "diffusive_control",
        ],
        ScenarioKind::ErgodicAverage => &["decay_exponent", "ergodic_projection", "degenerate_block"],
        ScenarioKind::MasterDecoherence => &["trace_law", "hermiticity_drift"],
        ScenarioKind::DualSpaceHomogeneous => &[
            "closed_form_match",
            "convergence_order",
            "oscillation_frequency",
            "approximation_error",
            "first_order_mass_average",
            "exact_mass_average",
        ],
        ScenarioKind::DualSpaceField => &["homogeneous_consistency", "real_linearity", "hamilton_jacobi_residual"],
        ScenarioKind::QseTeleportFree => &["dispersion_law", "gaussian_shape"],
        ScenarioKind::QseTeleportHarmonic => &["fixed_point_drift"],
        ScenarioKind::QseThermal => {
            &["thermal_law", "gaussian_shape", "classical_reduction", "high_temperature_limit", "ill_posed_boundary"]
        }
        ScenarioKind::DispersionTables => {
            &["reference_root", "short_time_asymptote", "long_time_asymptote", "monotone_roots"]
        }
    }
}

pub(crate) fn run(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    match cfg.scenario {
        ScenarioKind::FreePacket => free_packet(cfg, out),
        ScenarioKind::DampedPlaneWave => damped_plane_wave(cfg, out),
        ScenarioKind::DoebnerGoldin => doebner_goldin(cfg, out),
        ScenarioKind::WignerCheck => wigner_check(cfg, out),
        ScenarioKind::ErgodicAverage => ergodic_average(cfg, out),
        ScenarioKind::MasterDecoherence => master_decoherence(cfg, out),
        ScenarioKind::DualSpaceHomogeneous => dual_space_homogeneous(cfg, out),
        ScenarioKind::DualSpaceField => dual_space_field(cfg, out),
        ScenarioKind::QseTeleportFree => qse_teleport_free(cfg, out),
        ScenarioKind::QseTeleportHarmonic => qse_teleport_harmonic(cfg, out),
        ScenarioKind::QseThermal => qse_thermal(cfg, out),
        ScenarioKind::DispersionTables => dispersion_tables(cfg, out),
    }
}

fn phys(cfg: &ScenarioConfig) -> Result<PhysicalParams> {
    let p = &cfg.physics;
    PhysicalParams::new(p.hbar, p.mass, p.diffusion, p.k_b)
}

fn grid(cfg: &ScenarioConfig) -> Result<Grid1D> {
    Grid1D::new(cfg.grid.length, cfg.grid.points)
}

fn gaussian_packet(grid: &Grid1D, sigma: f64, x0: f64, k0: f64) -> Result<ComplexField> {
    let a = (2.0 * PI * sigma * sigma).powf(-0.25);
    ComplexField::from_fn(grid, |x| {
        Complex64::from_polar(a * (-(x - x0) * (x - x0) / (4.0 * sigma * sigma)).exp(), k0 * x)
    })
}

fn gaussian_density(grid: &Grid1D, s: f64, x0: f64) -> Result<RealField> {
    let norm = (2.0 * PI * s).sqrt();
    RealField::from_fn(grid, |x| (-(x - x0) * (x - x0) / (2.0 * s)).exp() / norm)
}

fn max_of(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v) })
}

fn teleportation(cfg: &ScenarioConfig, energy: f64, temperature: f64) -> Result<TeleportationParams> {
    let p = &cfg.physics;
    let tp = TeleportationParams::new(p.friction, p.kappa, energy, temperature)?;
    match p.mean_free_path {
        Some(lambda) => tp.with_mean_free_path(lambda),
        None => Ok(tp),
    }
}

fn free_packet(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let (sigma, x0, k0) = (cfg.state.sigma, cfg.state.x0, cfg.state.k0);
    let u = RealField::zeros(&g);
    let prop = LinearPropagator::new(&g, &u, 0.0, &params, cfg.run.dt)?;
    let mut psi = gaussian_packet(&g, sigma, x0, k0)?;
    let d_eval = if params.diffusion > 0.0 { params.diffusion } else { params.quantum_diffusion() };
    let (n0, e0) = (norm_squared(&psi), expectation_energy(&psi, &u, &params)?);
    let mut t = Table::new(
        "series",
        &["t", "norm2", "mean_x", "var_x", "energy", "mean_exact", "var_exact", "diffusive_term"],
    );
    let (mut norm_dev, mut energy_dev, mut spread_dev, mut drift_dev, mut term_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for step in 0..=cfg.run.steps {
        if step > 0 {
            psi = prop.apply(&psi, step)?;
        }
        if step % cfg.run.stride != 0 && step != cfg.run.steps {
            continue;
        }
        let time = step as f64 * cfg.run.dt;
        let n = norm_squared(&psi);
        let m = psi.modulus_squared().moments();
        let e = expectation_energy(&psi, &u, &params)?;
        let spread = params.hbar * time / (2.0 * params.mass * sigma * sigma);
        let var_exact = sigma * sigma * (1.0 + spread * spread);
        let mean_exact = x0 + params.hbar * k0 * time / params.mass;
        let term = diffusive_term_expectation(&psi, d_eval, &params)?.norm();
        norm_dev = norm_dev.max((n / n0 - 1.0).abs());
        energy_dev = energy_dev.max((e / e0 - 1.0).abs());
        spread_dev = spread_dev.max((m.variance / var_exact - 1.0).abs());
        drift_dev = drift_dev.max((m.mean - mean_exact).abs() / sigma);
        term_max = term_max.max(term);
        t.push(vec![time, n, m.mean, m.variance, e, mean_exact, var_exact, term]);
    }
    out.0.push(t);
    out.1.push(Check::at_most("norm_conservation", norm_dev, 1e-12, "max |norm2/norm2(0) - 1|"));
    out.1.push(Check::at_most("energy_conservation", energy_dev, 1e-10, "max |E/E(0) - 1|"));
    out.1.push(Check::at_most("spreading_law", spread_dev, 1e-8, "max |var/(sigma^2 (1 + (hbar t / 2 m sigma^2)^2)) - 1|"));
    out.1.push(Check::at_most("group_velocity", drift_dev, 1e-8, "max |<x> - x0 - hbar k0 t/m| / sigma"));
    out.1.push(Check::at_most(
        "diffusive_term_expectation",
        term_max,
        1e-12,
        "max |i hbar D int div(conj(psi) grad psi)| over snapshots",
    ));
    Ok(())
}

/// Unwraps `next` to the branch closest to `prev`.
fn unwrap_phase(prev: f64, next: f64) -> f64 {
    prev + (next - prev + PI).rem_euclid(2.0 * PI) - PI
}

fn damped_plane_wave(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let k = cfg.state.k0;
    let d = params.diffusion;
    let u = RealField::zeros(&g);
    let prop = LinearPropagator::new(&g, &u, d, &params, cfg.run.dt)?;
    let mut psi = ComplexField::from_fn(&g, |x| Complex64::from_polar(1.0, k * x))?;
    let xs = g.coordinates();
    let project = |psi: &ComplexField| -> Complex64 {
        psi.values().iter().zip(&xs).map(|(p, x)| p * Complex64::from_polar(1.0, -k * x)).sum::<Complex64>()
            / g.points() as f64
    };
    let mut t = Table::new(
        "series",
        &["t", "norm2", "amplitude", "amplitude_exact", "phase", "phase_exact", "relative_error"],
    );
    let mut phase = project(&psi).arg();
    let (mut amp_dev, mut phase_dev) = (0.0f64, 0.0f64);
    for step in 0..=cfg.run.steps {
        if step > 0 {
            psi = prop.apply(&psi, step)?;
        }
        let c = project(&psi);
        phase = unwrap_phase(phase, c.arg());
        if step % cfg.run.stride != 0 && step != cfg.run.steps {
            continue;
        }
        let time = step as f64 * cfg.run.dt;
        let amp_exact = (-d * k * k * time).exp();
        let phase_exact = -params.hbar * k * k * time / (2.0 * params.mass);
        let exact = Complex64::from_polar(amp_exact, phase_exact);
        let rel = (c - exact).norm() / exact.norm();
        amp_dev = amp_dev.max((c.norm() / amp_exact - 1.0).abs());
        if time > 0.0 {
            phase_dev = phase_dev.max(((phase - phase_exact) / phase_exact).abs());
        }
        t.push(vec![time, norm_squared(&psi), c.norm(), amp_exact, phase, phase_exact, rel]);
    }
    out.0.push(t);
    out.1.push(Check::at_most("amplitude_law", amp_dev, 1e-10, "max | |c| / exp(-D k^2 t) - 1 |"));
    out.1.push(Check::at_most("phase_law", phase_dev, 1e-10, "max |phase / (-hbar k^2 t / 2m) - 1|"));

    let dq = params.quantum_diffusion();
    let h = 0.005 * dq;
    let mut scan = Table::new("effective_diffusion", &["D", "D_eff"]);
    let mut best = (f64::NAN, f64::INFINITY);
    for j in 0..=990 {
        let dj = (0.05 + 0.005 * j as f64) * dq;
        let de = effective_diffusion(dj, &params)?;
        if de < best.1 {
            best = (dj, de);
        }
        scan.push(vec![dj, de]);
    }
    out.0.push(scan);
    out.1.push(Check::at_most(
        "effective_diffusion_minimizer",
        (best.0 - dq).abs(),
        h,
        format!("scan argmin {} vs hbar/2m = {dq}, step {h}", best.0),
    ));
    let target = params.hbar / params.mass;
    out.1.push(Check::at_most(
        "effective_diffusion_minimum",
        (best.1 - target).abs() / target,
        1e-12,
        format!("scan minimum {} vs hbar/m", best.1),
    ));
    Ok(())
}

fn doebner_goldin(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let u = RealField::zeros(&g);
    // von Mises bump: smooth, periodic and node-free
    let a = 1.0 / (cfg.state.sigma * cfg.state.sigma);
    let l = g.length();
    let psi0 = ComplexField::from_fn(&g, |x| Complex64::new((0.5 * a * (2.0 * PI * x / l).cos()).exp(), 0.0))?;
    let mut psi = psi0.normalized()?;
    let stepper = DoebnerGoldinStepper::new(&g, &u, params.diffusion, &params, cfg.run.dt, DoebnerGoldinForm::Divergence)?;
    let n0 = norm_squared(&psi);
    let mut t = Table::new("series", &["t", "norm2", "mean_x", "var_x", "energy", "diffusive_term"]);
    let (mut mass_dev, mut term_max) = (0.0f64, 0.0f64);
    for step in 0..=cfg.run.steps {
        if step > 0 {
            psi = stepper.apply(&psi, step)?;
        }
        if step % cfg.run.stride != 0 && step != cfg.run.steps {
            continue;
        }
        let n = norm_squared(&psi);
        let m = psi.modulus_squared().moments();
        let term = diffusive_term_expectation(&psi, params.diffusion, &params)?.norm();
        mass_dev = mass_dev.max((n / n0 - 1.0).abs());
        term_max = term_max.max(term);
        t.push(vec![step as f64 * cfg.run.dt, n, m.mean, m.variance, expectation_energy(&psi, &u, &params)?, term]);
    }
    out.0.push(t);
    out.1.push(Check::at_most("mass_conservation", mass_dev, 1e-8, "max |norm2/norm2(0) - 1|"));
    out.1.push(Check::at_most(
        "diffusive_term_expectation",
        term_max,
        1e-12,
        "max |i hbar D int div(conj(psi) grad psi)| over snapshots",
    ));
    Ok(())
}

fn wigner_check(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let (sigma, x0, k0) = (cfg.state.sigma, cfg.state.x0, cfg.state.k0);
    let bump = |c: f64| gaussian_packet(&g, 0.78 * sigma, c, 0.0);
    let two = bump(-2.5)?.zip_map(&bump(2.5)?, |a, b| a + b)?.normalized()?;
    let states = [gaussian_packet(&g, sigma, 0.0, 0.0)?, gaussian_packet(&g, sigma, x0 + 1.0, k0)?, two];
    let mut t = Table::new("marginals", &["state", "position_error", "momentum_error", "min_f", "max_f"]);
    let (mut pos_err, mut mom_err, mut negativity) = (0.0f64, 0.0f64, 0.0f64);
    for (i, psi) in states.iter().enumerate() {
        let f = wigner_transform(psi, &params)?;
        let rho = marginal_position(&f, &params);
        let direct = density(psi, &params);
        let pe = max_of(rho.values().iter().zip(direct.values()).map(|(a, b)| (a - b).abs()));
        let gp = marginal_momentum(&f);
        let oracle = momentum_density_of_state(psi, &params);
        let me = max_of(gp.values.iter().zip(&oracle.values).map(|(a, b)| (a - b).abs()));
        pos_err = pos_err.max(pe);
        mom_err = mom_err.max(me);
        if i == 2 {
            negativity = -f.min() / f.max();
        }
        t.push(vec![i as f64, pe, me, f.min(), f.max()]);
    }
    out.0.push(t);
    out.1.push(Check::at_most("position_marginal", pos_err, 1e-8, "max |int f dp - m |psi|^2| over three states"));
    out.1.push(Check::at_most("momentum_marginal", mom_err, 1e-8, "max |int f dx - |phi(p)|^2| over three states"));
    out.1.push(Check::at_least("superposition_negativity", negativity, 1e-3, "-min f / max f for the two-bump state"));

    // potential reconstruction from a harmonic ground state
    let omega = cfg.physics.omega;
    let width = (params.hbar / (params.mass * omega)).sqrt();
    let rg = Grid1D::new(20.0 * width, 128)?;
    let harmonic = PotentialSpec::harmonic(omega);
    let u = harmonic.sample(&rg, &params)?;
    let psi = ComplexField::from_fn(&rg, |x| {
        Complex64::new((PI * width * width).powf(-0.25) * (-0.5 * x * x / (width * width)).exp(), 0.0)
    })?;
    let h = cfg.run.dt;
    let unitary = LinearPropagator::new(&rg, &u, 0.0, &params, h)?;
    let fwd = unitary.apply(&psi, 0)?;
    let bwd = unitary.apply(&psi.map(|z| z.conj())?, 0)?.map(|z| z.conj())?;
    let psi_dot = fwd.zip_map(&bwd, |a, b| (a - b) / (2.0 * h))?;
    let inf = infer_potential(&psi, &psi_dot, &params, 1e-300)?;
    let d = if params.diffusion > 0.0 { params.diffusion } else { 0.1 };
    let diffusive = LinearPropagator::new(&rg, &u, d, &params, h)?;
    let dfwd = diffusive.apply(&psi, 0)?;
    let dpsi_dot = dfwd.zip_map(&psi, |a, b| (a - b) / h)?;
    let dinf = infer_potential(&psi, &dpsi_dot, &params, 1e-300)?;
    let mut rec = Table::new("reconstruction", &["x", "potential_inferred", "potential_exact", "imaginary_residual"]);
    let mut bulk: f64 = 0.0;
    for (j, x) in rg.coordinates().into_iter().enumerate() {
        let (ui, ue) = (inf.potential.values()[j], u.values()[j]);
        if x.abs() < 3.0 * width {
            bulk = bulk.max((ui - ue).abs());
        }
        rec.push(vec![x, ui, ue, inf.imaginary.values()[j]]);
    }
    out.0.push(rec);
    out.1.push(Check::at_most("potential_reconstruction", bulk, 1e-7, "max |U_inferred - U| for |x| < 3 oscillator lengths"));
    let ratio = dinf.residual / inf.residual;
    out.1.push(Check::at_least(
        "diffusive_control",
        ratio,
        1e3,
        format!("residual {:e} (D = {d}) vs {:e} (unitary)", dinf.residual, inf.residual),
    ));
    Ok(())
}

fn ergodic_average(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let hw = params.hbar * cfg.physics.omega;
    let dim = 8;
    let spectrum = EnergySpectrum::new((0..dim).map(|n| hw * (n as f64 + 0.25 * (n as f64).powf(1.5))).collect())?;
    let amps: Vec<Complex64> =
        (0..dim).map(|n| Complex64::from_polar(1.0 / (dim as f64).sqrt(), 0.7 * (n * n) as f64)).collect();
    let rho = DensityMatrix::pure(&amps)?;
    let limit = ergodic_limit(&rho, &spectrum)?;
    let gap = spectrum.smallest_gap(params.hbar).unwrap_or(f64::INFINITY);
    let bound = 2.0 * rho.offdiag_norm() / gap;
    let mut t = Table::new("average", &["tau", "offdiag_norm", "envelope_bound", "distance_to_limit"]);
    t.log_x = true;
    let (mut taus, mut norms) = (Vec::new(), Vec::new());
    let mut j = 0;
    while j <= cfg.run.steps {
        let tau = cfg.run.dt * 1000f64.powf(j as f64 / cfg.run.steps as f64);
        let avg = time_average(&rho, &spectrum, tau, &params)?;
        let n = avg.offdiag_norm();
        taus.push(tau);
        norms.push(n);
        t.push(vec![tau, n, bound / tau, avg.max_diff(&limit)]);
        j += cfg.run.stride;
    }
    out.0.push(t);
    let (slope, _) = log_log_fit(&taus, &norms)?;
    out.1.push(Check::at_most(
        "decay_exponent",
        (slope + 1.0).abs(),
        0.05,
        format!("fitted exponent {slope} over tau in [{}, {}]", taus[0], taus[taus.len() - 1]),
    ));

    let diag = DensityMatrix::from_evolved(nalgebra::DMatrix::from_fn(dim, dim, |k, n| {
        if k == n { rho.get(k, n) } else { Complex64::new(0.0, 0.0) }
    }));
    let far = time_average(&rho, &spectrum, 1e12 * params.hbar / hw, &params)?;
    let projection = limit.max_diff(&diag).max(far.max_diff(&limit));
    out.1.push(Check::at_most(
        "ergodic_projection",
        projection,
        1e-10,
        "limit vs Kronecker projection and vs the average at tau = 1e12 hbar/E",
    ));

    let rigged = EnergySpectrum::new(vec![0.0, hw, hw])?;
    let s = 1.0 / 3f64.sqrt();
    let three = DensityMatrix::pure(&[Complex64::new(s, 0.0), Complex64::new(0.0, s), Complex64::new(s, 0.0)])?;
    let lim3 = ergodic_limit(&three, &rigged)?;
    let avg3 = time_average(&three, &rigged, 1e6 * params.hbar / hw, &params)?;
    let kept = (lim3.get(1, 2) - three.get(1, 2)).norm().max((avg3.get(1, 2) - three.get(1, 2)).norm());
    let removed = lim3.get(0, 1).norm().max(lim3.get(0, 2).norm());
    out.1.push(Check::at_most(
        "degenerate_block",
        kept.max(removed),
        1e-12,
        "coherence inside the degenerate pair kept, coherences to the other level removed",
    ));
    Ok(())
}

fn master_decoherence(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let dim = cfg.grid.points;
    let basis = OscillatorBasis::new(dim, cfg.physics.omega, &params)?;
    let d = params.diffusion;
    let dt = cfg.run.dt;
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    amps[0] = Complex64::new(1.0, 0.0);
    let mut rho = DensityMatrix::pure(&amps)?;
    let step = |r: &DensityMatrix, n: usize| {
        master_equation_step(r, &basis.hamiltonian, &basis.momentum_squared, d, dt, &params)
            .map_err(|e| if let Error::StepDiverged { .. } = e { Error::StepDiverged { step: n } } else { e })
    };
    let mut t = Table::new(
        "series",
        &["t", "trace", "energy", "offdiag_norm", "hermiticity", "rate_measured", "rate_analytic", "rate_error"],
    );
    let mut prev_trace = f64::NAN;
    let mut next = step(&rho, 1)?;
    let mut worst: f64 = 0.0;
    for n in 0..=cfg.run.steps {
        let analytic = trace_decay_rate(&rho, &basis.momentum_squared, d, &params);
        let measured = if n == 0 { f64::NAN } else { (next.trace() - prev_trace) / (2.0 * dt) };
        let err = ((measured - analytic) / analytic).abs();
        if n > 0 {
            worst = worst.max(err);
        }
        if n % cfg.run.stride == 0 || n == cfg.run.steps {
            t.push(vec![
                n as f64 * dt,
                rho.trace(),
                rho.expectation(&basis.hamiltonian).re,
                rho.offdiag_norm(),
                rho.hermiticity_deviation(),
                if n == 0 { analytic } else { measured },
                analytic,
                if n == 0 { 0.0 } else { err },
            ]);
        }
        if n == cfg.run.steps {
            break;
        }
        prev_trace = rho.trace();
        rho = next;
        next = step(&rho, n + 2)?;
    }
    out.0.push(t);
    out.1.push(Check::at_most(
        "trace_law",
        worst,
        1e-6,
        "max relative error of the centered d tr(rho)/dt against -2 D tr(p^2 rho)/hbar^2",
    ));
    out.1.push(Check::at_most(
        "hermiticity_drift",
        rho.hermiticity_deviation(),
        1e-10,
        format!("after {} RK4 steps", cfg.run.steps),
    ));
    Ok(())
}

/// `I_0(x)` by its power series.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn dual_space_homogeneous(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let hbar = params.hbar;
    let energy = cfg.physics.energy.unwrap_or(1.0);
    let dp = DualCouplingParams::new(energy, cfg.physics.epsilon)?;
    let times: Vec<f64> = (0..=cfg.run.steps).map(|j| j as f64 * cfg.run.dt).collect();
    let traj = integrate_action_odes(&dp, &params, &times)?;
    let psi = traj.wavefunction(hbar);
    // the approximate form starts from S_im(0) = -hbar eps / 2E
    let shift = (0.5 * dp.ratio()).exp();
    let mass_period = PI * hbar / energy;
    let mut t = Table::new(
        "series",
        &[
            "t",
            "s_re",
            "s_im",
            "s_re_closed",
            "s_im_closed",
            "density",
            "density_exact",
            "density_first_order",
            "approx_error",
            "invariant",
        ],
    );
    let (mut closed_dev, mut approx_sup) = (0.0f64, 0.0f64);
    let mut densities = Vec::with_capacity(times.len());
    for (j, &time) in times.iter().enumerate() {
        let sr = closed_form_action(&dp, &params, time, ActionBranch::OdeConsistent)?;
        let si = closed_form_imag_action(&dp, &params, time)?;
        let rho = params.mass * psi[j].norm_sqr();
        densities.push(rho);
        closed_dev = closed_dev.max((traj.s_re[j] - sr).abs().max((traj.s_im[j] - si).abs()) / hbar);
        let approx_err = if dp.ratio().abs() <= dp.ratio_guard {
            (psi[j] * shift - approx_wavefunction(&dp, &params, time)?).norm()
        } else {
            f64::NAN
        };
        if time <= mass_period * (1.0 + 1e-12) {
            approx_sup = if approx_err.is_nan() { f64::NAN } else { approx_sup.max(approx_err) };
        }
        if j % cfg.run.stride == 0 || j + 1 == times.len() {
            t.push(vec![
                time,
                traj.s_re[j],
                traj.s_im[j],
                sr,
                si,
                rho,
                params.mass * exact_homogeneous_density(&dp, &params, time)?,
                mass_oscillation_first_order(&dp, &params, params.mass, time),
                approx_err,
                action_invariant(&dp, &params, traj.s_re[j], traj.s_im[j]),
            ]);
        }
    }
    out.0.push(t);
    out.1.push(Check::at_most("closed_form_match", closed_dev, 1e-8, "max |S_ode - S_closed| / hbar"));

    let bound = dp.max_action_step(hbar);
    let n0 = 2500usize;
    let horizon = n0 as f64 * 0.8 * bound;
    let closed = closed_form_action(&dp, &params, horizon, ActionBranch::OdeConsistent)?;
    let mut errs = Vec::new();
    for level in 0..3 {
        let n = n0 << level;
        let step = horizon / n as f64 * (1.0 + 1e-10);
        let r = integrate_action_odes_with_step(&dp, &params, &[horizon], step)?;
        errs.push((r.s_re[0] - closed).abs());
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let dev = max_of(orders.iter().map(|p| (p - 4.0).abs()));
    out.1.push(Check::at_most(
        "convergence_order",
        dev,
        0.2,
        format!("observed orders {orders:?} from errors {errs:?}"),
    ));

    let (w, bin) = dominant_angular_frequency(&densities, cfg.run.dt)?;
    let expected = 2.0 * energy / hbar;
    out.1.push(Check::at_most(
        "oscillation_frequency",
        (w - expected).abs(),
        bin,
        format!("spectral peak {w} vs 2E/hbar = {expected}, bin {bin}"),
    ));
    let ratio = dp.ratio();
    out.1.push(Check::at_most(
        "approximation_error",
        approx_sup,
        2.0 * ratio * ratio,
        "sup over one mass period of |psi_ode - exp[-iEt/hbar + (eps/2E) cos(2Et/hbar)]|, same psi(0)",
    ));
    let m = params.mass;
    let first = mass_period_average_first_order(&dp, &params, m, 64);
    out.1.push(Check::at_most("first_order_mass_average", (first - m).abs() / m, 1e-12, format!("period mean {first}")));
    let exact = mass_period_average(&dp, &params, m, 256);
    let i0 = m * bessel_i0(ratio);
    out.1.push(Check::at_most(
        "exact_mass_average",
        (exact / i0 - 1.0).abs(),
        1e-12,
        format!("period mean {exact} = m I0(eps/E) = {i0}"),
    ));
    Ok(())
}

fn dual_space_field(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let energy = cfg.physics.energy.unwrap_or(1.0);
    let eps = cfg.physics.epsilon;
    let omega = cfg.physics.omega;
    let c = 0.5 * params.mass * omega * omega;
    let u = RealField::from_fn(&g, |x| energy + c * x * x)?;
    let dt = cfg.run.dt;
    let stepper = DualStepper::new(&u, eps, &params, dt)?;
    let (sigma, x0, k0) = (cfg.state.sigma, cfg.state.x0, cfg.state.k0);
    let psi0 = gaussian_packet(&g, sigma, x0, k0)?;

    let mut t = Table::new("series", &["t", "norm2", "mean_x", "var_x", "residual_exact", "residual_linearized"]);
    let mut prev = psi0.clone();
    let mut cur = stepper.apply(&psi0, 1)?;
    let mut worst: f64 = 0.0;
    for n in 1..=cfg.run.steps {
        let next = stepper.apply(&cur, n + 1)?;
        if n % cfg.run.stride == 0 || n == cfg.run.steps {
            let r = teleportation_ns_residual(&[prev.clone(), cur.clone(), next.clone()], dt, &u, eps, &params, 1e-12)?;
            let m = cur.modulus_squared().moments();
            worst = worst.max(r.max_exact);
            t.push(vec![n as f64 * dt, norm_squared(&cur), m.mean, m.variance, r.max_exact, r.max_linearized]);
        }
        prev = cur;
        cur = next;
    }
    out.0.push(t);

    let dp = DualCouplingParams::new(energy, eps)?;
    let flat = RealField::constant(&g, energy)?;
    let homogeneous = DualStepper::new(&flat, eps, &params, dt)?;
    let mut psi = ComplexField::from_fn(&g, |_| Complex64::new(1.0, 0.0))?;
    let mut hom_dev: f64 = 0.0;
    for n in 1..=cfg.run.steps {
        psi = homogeneous.apply(&psi, n)?;
        let exact = exact_homogeneous_density(&dp, &params, n as f64 * dt)?;
        hom_dev = hom_dev.max(max_of(psi.values().iter().map(|z| (z.norm_sqr() / exact - 1.0).abs())));
    }
    out.1.push(Check::at_most(
        "homogeneous_consistency",
        hom_dev,
        1e-10,
        "uniform state under U = E against (E + eps) / (E + eps cos(2 S_re / hbar))",
    ));

    let other = gaussian_packet(&g, 0.7 * sigma, x0 + 2.0, -k0)?;
    let (a, b) = (0.7, -1.3);
    let combo = psi0.zip_map(&other, |p, q| a * p + b * q)?;
    let lhs = stepper.apply(&combo, 0)?;
    let (sa, sb) = (stepper.apply(&psi0, 0)?, stepper.apply(&other, 0)?);
    let rhs = sa.zip_map(&sb, |p, q| a * p + b * q)?;
    let lin = max_of(lhs.values().iter().zip(rhs.values()).map(|(p, q)| (p - q).norm())) / max_of(lhs.values().iter().map(|z| z.norm())).max(1e-300);
    let i = Complex64::new(0.0, 1.0);
    let rot = stepper.apply(&psi0.scale(i), 0)?;
    let cplx = max_of(rot.values().iter().zip(sa.values()).map(|(p, q)| (p - i * q).norm()));
    out.1.push(Check::at_most(
        "real_linearity",
        lin,
        1e-12,
        format!("complex scaling by i breaks linearity by {cplx:e}"),
    ));
    let scale = energy.abs() + eps.abs();
    out.1.push(Check::at_most(
        "hamilton_jacobi_residual",
        worst / scale,
        1e-4,
        "max |complex Hamilton-Jacobi residual with the exact coupling| / (|E| + |eps|) on the occupied region",
    ));
    Ok(())
}

/// Gaussian Smoluchowski run sampled every `cfg.run.dt`; returns the table
/// and the largest ratio deviation and excess kurtosis.
fn qse_gaussian_run(
    cfg: &ScenarioConfig,
    model: QseModel,
    tp: &TeleportationParams,
    params: &PhysicalParams,
    rho0: RealField,
    law: impl Fn(f64) -> Result<f64>,
) -> Result<(Table, f64, f64, usize)> {
    let g = rho0.grid().clone();
    let stepper = QseStepper::new(&g, model, &PotentialSpec::Zero, *tp, *params, 1.0)?;
    let mut state = SmoluchowskiState::new(rho0)?;
    let mut steps = 0usize;
    let mut t = Table::new("series", &["t", "mass", "mean_x", "var_x", "var_law", "ratio", "excess_kurtosis", "solver_steps"]);
    let (mut ratio_dev, mut kurt) = (0.0f64, 0.0f64);
    for j in 1..=cfg.run.steps {
        let target = j as f64 * cfg.run.dt;
        stepper.advance_to(&mut state, target, QSE_SAFETY, &mut steps)?;
        if j % cfg.run.stride != 0 && j != cfg.run.steps {
            continue;
        }
        let m = state.rho.moments();
        let s = law(target)?;
        let ratio = m.variance / s;
        ratio_dev = ratio_dev.max((ratio - 1.0).abs());
        kurt = kurt.max(m.excess_kurtosis.abs());
        t.push(vec![target, m.mass, m.mean, m.variance, s, ratio, m.excess_kurtosis, steps as f64]);
    }
    Ok((t, ratio_dev, kurt, steps))
}

fn qse_teleport_free(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let s0 = cfg.state.sigma * cfg.state.sigma;
    let rho0 = gaussian_density(&g, s0, cfg.state.x0)?;
    let energy = match cfg.physics.energy {
        Some(e) => e,
        None => zero_mean_source_energy(&rho0, &PotentialSpec::Zero, &params, QseModel::ZeroTemperature, 0.0)?,
    };
    let tp = teleportation(cfg, energy, 0.0)?;
    let t0 = zero_temperature_time_of(s0, &tp, &params);
    let (table, dev, kurt, steps) =
        qse_gaussian_run(cfg, QseModel::ZeroTemperature, &tp, &params, rho0, |t| zero_temperature_dispersion(t + t0, &tp, &params))?;
    let span = (cfg.run.dt, cfg.run.dt * cfg.run.steps as f64);
    out.0.push(table);
    out.1.push(Check::at_most(
        "dispersion_law",
        dev,
        0.02,
        format!("max |var / root - 1| for t in [{}, {}], {steps} solver steps", span.0, span.1),
    ));
    out.1.push(Check::at_most("gaussian_shape", kurt, 0.05, "max |excess kurtosis|"));
    Ok(())
}

fn qse_teleport_harmonic(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let omega = cfg.physics.omega;
    let s = params.hbar / (2.0 * params.mass * omega);
    let energy = cfg.physics.energy.unwrap_or(0.5 * params.hbar * omega);
    let tp = teleportation(cfg, energy, 0.0)?;
    let u = PotentialSpec::harmonic(omega);
    let rho0 = gaussian_density(&g, s, 0.0)?;
    let stepper = QseStepper::new(&g, QseModel::ZeroTemperature, &u, tp, params, 1.0)?;
    let mut state = SmoluchowskiState::new(rho0.clone())?;
    let peak = rho0.max_abs();
    let mut steps = 0usize;
    let mut t = Table::new("series", &["t", "mass", "mean_x", "var_x", "drift", "solver_steps"]);
    let mut worst: f64 = 0.0;
    for j in 1..=cfg.run.steps {
        let target = j as f64 * cfg.run.dt;
        stepper.advance_to(&mut state, target, QSE_SAFETY, &mut steps)?;
        let drift = max_of(state.rho.values().iter().zip(rho0.values()).map(|(a, b)| (a - b).abs())) / peak;
        worst = worst.max(drift);
        if j % cfg.run.stride == 0 || j == cfg.run.steps {
            let m = state.rho.moments();
            t.push(vec![target, m.mass, m.mean, m.variance, drift, steps as f64]);
        }
    }
    out.0.push(t);
    out.1.push(Check::at_most(
        "fixed_point_drift",
        worst,
        1e-6,
        format!("max |rho - rho0| / max rho0 over {steps} solver steps, kappa = {}", tp.kappa),
    ));
    Ok(())
}

fn qse_thermal(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let g = grid(cfg)?;
    let temperature = cfg.physics.temperature;
    let s0 = cfg.state.sigma * cfg.state.sigma;
    let rho0 = gaussian_density(&g, s0, cfg.state.x0)?;
    let energy = match cfg.physics.energy {
        Some(e) => e,
        None => zero_mean_source_energy(&rho0, &PotentialSpec::Zero, &params, QseModel::Thermal, temperature)?,
    };
    let tp = teleportation(cfg, energy, temperature)?;
    let t0 = thermal_time_of(s0, &tp, &params)?;
    let (table, dev, kurt, steps) =
        qse_gaussian_run(cfg, QseModel::Thermal, &tp, &params, rho0.clone(), |t| thermal_dispersion(t + t0, &tp, &params))?;
    out.0.push(table);
    out.1.push(Check::at_most("thermal_law", dev, 0.02, format!("max |var / root - 1|, {steps} solver steps")));
    out.1.push(Check::at_most("gaussian_shape", kurt, 0.05, "max |excess kurtosis|"));

    let classical = TeleportationParams::new(cfg.physics.friction, 0.0, 0.0, temperature)?;
    let d = classical.einstein_diffusion(&params);
    let (mut table, dev, _, _) =
        qse_gaussian_run(cfg, QseModel::ClassicalThermal, &classical, &params, rho0, |t| Ok(s0 + 2.0 * d * t))?;
    table.name = "classical".into();
    out.0.push(table);
    out.1.push(Check::at_most("classical_reduction", dev, 1e-3, "kappa = 0, no quantum potential: var vs s0 + 2 D t"));

    // hot limit: kappa^2 lambda_T^2 = 1e-5
    let p = &cfg.physics;
    let hot_t = if p.kappa > 0.0 { params.hbar * params.hbar * p.kappa * p.kappa / (4.0 * params.mass * params.k_b * 1e-5) } else { temperature };
    let hot = TeleportationParams::new(p.friction, p.kappa, 0.0, hot_t)?;
    let rate = hot.einstein_diffusion(&params) * (p.kappa * p.kappa).max(1e-300);
    let mut worst: f64 = 0.0;
    for j in 0..=20 {
        let t = 0.1 * 100f64.powf(j as f64 / 20.0) / rate;
        let a = thermal_dispersion(t, &hot, &params)?;
        let b = high_temperature_dispersion(t, &hot, &params)?;
        worst = worst.max((a / b - 1.0).abs());
    }
    out.1.push(Check::at_most(
        "high_temperature_limit",
        worst,
        1e-3,
        "thermal root vs exponential law at kappa^2 lambda_T^2 = 1e-5, D kappa^2 t in [0.1, 10]",
    ));

    let at = |product: f64| -> Result<TeleportationParams> {
        let temp = params.hbar * params.hbar * p.kappa * p.kappa / (4.0 * params.mass * params.k_b * product);
        TeleportationParams::new(p.friction, p.kappa, 0.0, temp)
    };
    let boundary = matches!(thermal_dispersion(1.0, &at(2.0)?, &params), Err(Error::IllPosed { .. }));
    let above = matches!(thermal_dispersion(1.0, &at(2.5)?, &params), Err(Error::IllPosed { .. }));
    let below = thermal_dispersion(1.0, &at(2.0 * (1.0 - 1e-9))?, &params).is_ok();
    let ok = boundary && above && below;
    out.1.push(Check::at_least(
        "ill_posed_boundary",
        if ok { 1.0 } else { 0.0 },
        1.0,
        format!("IllPosed at product 2: {boundary}, at 2.5: {above}; solvable just below: {below}"),
    ));
    Ok(())
}

fn dispersion_tables(cfg: &ScenarioConfig, out: &mut Outcome) -> Result<()> {
    let params = phys(cfg)?;
    let p = &cfg.physics;
    let tp = teleportation(cfg, 0.0, p.temperature)?;
    let (hbar, m, b, kappa) = (params.hbar, params.mass, p.friction, p.kappa);
    let d_t = tp.teleportation_diffusion(&params);
    let mut t = Table::new(
        "dispersion",
        &["t", "var_zero_temperature", "var_thermal", "var_high_temperature", "ratio_short", "ratio_long"],
    );
    t.log_x = true;
    let mut roots = Vec::new();
    for j in 0..=cfg.run.steps {
        let time = cfg.run.dt * 1e12f64.powf(j as f64 / cfg.run.steps as f64);
        let s = zero_temperature_dispersion(time, &tp, &params)?;
        let hot = if p.temperature > 0.0 { high_temperature_dispersion(time, &tp, &params)? } else { f64::NAN };
        // the thermal root grows exponentially and can leave the f64 range
        let thermal = match p.temperature > 0.0 {
            false => f64::NAN,
            true => match thermal_dispersion(time, &tp, &params) {
                Err(Error::Domain(_)) if hot > 1e300 => f64::INFINITY,
                r => r?,
            },
        };
        let short = s / (hbar * (time / (m * b)).sqrt());
        let long = s / (2.0 * d_t * time);
        roots.push((time, s, short, long));
        t.push(vec![time, s, thermal, hot, short, long]);
    }
    out.0.push(t);

    let rhs = hbar * hbar * kappa * kappa / (4.0 * m * b);
    let root = zero_temperature_dispersion(1.0, &tp, &params)?;
    let (lo, hi) = (root * (1.0 - 1e-9), root * (1.0 + 1e-9));
    let bracketed = zero_temperature_law_lhs(lo, kappa) < rhs && zero_temperature_law_lhs(hi, kappa) > rhs;
    let residual = (zero_temperature_law_lhs(root, kappa) - rhs).abs() / rhs;
    out.1.push(Check::at_most(
        "reference_root",
        if bracketed { residual } else { f64::INFINITY },
        1e-10,
        format!("root {root} at t = 1 for right-hand side {rhs}; sign change across root(1 -+ 1e-9): {bracketed}"),
    ));
    let first = roots[0];
    let last = roots[roots.len() - 1];
    out.1.push(Check::at_most(
        "short_time_asymptote",
        (first.2 - 1.0).abs(),
        0.01,
        format!("root / (hbar sqrt(t / m b)) at t = {}", first.0),
    ));
    out.1.push(Check::at_most(
        "long_time_asymptote",
        (last.3 - 1.0).abs(),
        0.01,
        format!("root / (2 D_T t) at t = {}", last.0),
    ));
    let violations = roots.windows(2).filter(|w| !(w[1].1 > w[0].1)).count();
    out.1.push(Check::at_most("monotone_roots", violations as f64, 0.0, "count of non-increasing neighbours"));
    Ok(())
}
