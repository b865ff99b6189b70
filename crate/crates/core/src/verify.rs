//! Built-in verification suites: solver convergence and conservation, and
//! autodiff against finite differences. Each check returns its measured
//! value next to the limit it must meet.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{build_grid, DomainSpec, RefinementBox, StructuredGrid};
use crate::material::MaterialLibrary;
use crate::nn::mlp::JetDual;
use crate::nn::{AffineMap, Jet, JetOrder, SurrogateModel};
use crate::solver::{
    BoundaryConditions, FaceCondition, HeatSolver, ProcessParams, SolverSettings, SourceFn, ThermalField,
    TopCondition,
};
use crate::{UM, US};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &'static str, value: f64, limit: f64, detail: String) -> Self {
        Self {
            name,
            value,
            limit,
            passed: value <= limit,
            detail,
        }
    }

    fn at_least(name: &'static str, value: f64, limit: f64, detail: String) -> Self {
        Self {
            name,
            value,
            limit,
            passed: value >= limit,
            detail,
        }
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} {:.3e} (limit {:.1e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.limit,
            self.detail
        )
    }
}

/// One-cell-thick slab, `nx × nz` uniform cells.
pub fn slab_grid(nx: usize, lx: f64, nz: usize, lz: f64) -> Result<StructuredGrid> {
    let axis = |n: usize, l: f64| (0..=n).map(|i| l * i as f64 / n as f64).collect::<Vec<_>>();
    StructuredGrid::from_axes(axis(nx, lx), axis(1, 10.0 * UM), axis(nz, lz))
}

fn constant_material() -> MaterialLibrary {
    MaterialLibrary::constant(8000.0, 500.0, 20.0)
}

/// No laser, no surface exchange.
fn quiet_process() -> ProcessParams {
    ProcessParams {
        power_w: 0.0,
        h_conv: 0.0,
        emissivity: 0.0,
        ..ProcessParams::paper_default()
    }
}

/// Relative L2 error at `t_end` for the manufactured solution
/// `T₀ + A sin(πx/L) e^{−t/τ}` on a slab with fixed ends, and the final
/// nodal field. With `discrete_time` the source uses the backward difference
/// of the exact solution in time, leaving only the spatial error.
pub fn mms_error(nx: usize, dt: f64, discrete_time: bool, t_end: f64) -> Result<(f64, Vec<f64>)> {
    let lx = 400.0 * UM;
    let grid = slab_grid(nx, lx, 1, 10.0 * UM)?;
    let (rho_c, k, amp, tau) = (8000.0 * 500.0, 20.0, 200.0, 300.0 * US);
    let pi = std::f64::consts::PI;
    let exact = move |x: f64, t: f64| 293.0 + amp * (pi * x / lx).sin() * (-t / tau).exp();
    let source: SourceFn = Arc::new(move |p: [f64; 3], t: f64| {
        let mode = (pi * p[0] / lx).sin();
        let dtdt = if discrete_time {
            (exact(p[0], t) - exact(p[0], t - dt)) / dt
        } else {
            -amp * mode * (-t / tau).exp() / tau
        };
        let lap = -(pi / lx).powi(2) * amp * mode * (-t / tau).exp();
        rho_c * dtdt - k * lap
    });
    let mut bc = BoundaryConditions::insulated();
    bc.x_min = FaceCondition::Dirichlet(293.0);
    bc.x_max = FaceCondition::Dirichlet(293.0);
    let settings = SolverSettings {
        dt,
        linear_tol: 1e-13,
        ..SolverSettings::default()
    };
    let solver = HeatSolver::with_boundary(grid.clone(), -1.0, constant_material(), quiet_process(), settings, bc)?
        .with_source(source);
    let mut f0 = solver.initial_field(0.0);
    for n in 0..grid.node_count() {
        f0.temperature[n] = exact(grid.node(n)[0], 0.0);
    }
    let f = last(solver.run(&f0, t_end, &[])?);
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..grid.node_count() {
        let e = exact(grid.node(n)[0], t_end) - 293.0;
        num += (f.temperature[n] - 293.0 - e).powi(2);
        den += e * e;
    }
    Ok(((num / den).sqrt(), f.temperature))
}

fn last(mut fields: Vec<ThermalField>) -> ThermalField {
    fields.pop().expect("solver returns the final field")
}

/// Smallest observed spatial order over successive halvings 8 → 64 cells.
pub fn mms_spatial_order() -> Result<CheckResult> {
    let errs = [8, 16, 32, 64]
        .iter()
        .map(|&n| mms_error(n, 5.0 * US, true, 300.0 * US).map(|e| e.0))
        .collect::<Result<Vec<f64>>>()?;
    let order = errs.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    Ok(CheckResult::at_least("mms spatial order", order, 1.9, format!("errors {:?}", errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>())))
}

/// Relative L2 error against the semi-infinite solid under constant surface
/// flux, `ΔT = 2q√(αt)/k · ierfc(d / 2√(αt))`.
pub fn erfc_surface_flux() -> Result<CheckResult> {
    let (lz, nz) = (300.0 * UM, 150);
    let grid = slab_grid(1, 10.0 * UM, nz, lz)?;
    let q0 = 1e9;
    let mut bc = BoundaryConditions::insulated();
    bc.top = TopCondition::Flux(q0);
    let settings = SolverSettings {
        dt: 0.1 * US,
        ..SolverSettings::default()
    };
    let solver = HeatSolver::with_boundary(grid.clone(), -1.0, constant_material(), quiet_process(), settings, bc)?;
    let t_end = 100.0 * US;
    let f = last(solver.run(&solver.initial_field(0.0), t_end, &[])?);
    let (k, alpha) = (20.0, 20.0 / (8000.0 * 500.0));
    let s = (alpha * t_end).sqrt();
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..grid.node_count() {
        let depth = lz - grid.node(n)[2];
        let exact = 2.0 * q0 / k * s / std::f64::consts::PI.sqrt() * (-depth * depth / (4.0 * s * s)).exp()
            - q0 * depth / k * libm::erfc(depth / (2.0 * s));
        num += (f.temperature[n] - 293.0 - exact).powi(2);
        den += exact * exact;
    }
    let rel = (num / den).sqrt();
    Ok(CheckResult::at_most("erfc surface flux rel L2", rel, 0.02, format!("{nz} cells, t = 100 us")))
}

/// Desk grid with SS 316L, powder layer and a hot spot crossing the melting
/// range, all faces as given by `top` plus insulation elsewhere.
pub fn audit_solver(top: TopCondition) -> Result<(HeatSolver, ThermalField)> {
    let spec = DomainSpec::desk_scale();
    let grid = build_grid(&spec, 40.0 * UM, &RefinementBox::desk_scale())?;
    let mut bc = BoundaryConditions::insulated();
    bc.top = top;
    let solver = HeatSolver::with_boundary(
        grid.clone(),
        spec.interface_z(),
        MaterialLibrary::ss316l(),
        ProcessParams::for_domain(&spec),
        SolverSettings {
            picard_rel_tol: 1e-10,
            linear_tol: 1e-12,
            ..SolverSettings::default()
        },
        bc,
    )?;
    let mut f = solver.initial_field(0.0);
    for n in 0..grid.node_count() {
        let p = grid.node(n);
        f.temperature[n] = 400.0 + 900.0 * (-((p[0] - 2e-4).powi(2) + p[1].powi(2)) / 4e-9).exp();
    }
    Ok((solver, f))
}

/// Largest per-step enthalpy change of an insulated run relative to the
/// initial enthalpy, over ten 0.5 μs steps.
pub fn enthalpy_conservation() -> Result<CheckResult> {
    let (solver, mut f) = audit_solver(TopCondition::Insulated)?;
    let h0 = solver.enthalpy(&f);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (next, _) = solver.step(&f, 0.5 * US)?;
        worst = worst.max((solver.enthalpy(&next) - solver.enthalpy(&f)).abs() / h0.abs());
        f = next;
    }
    Ok(CheckResult::at_most("insulated enthalpy drift", worst, 1e-6, "per step, 10 steps".into()))
}

/// Random network `[4, w, w, 1]` with random input/output scalings.
fn random_network(rng: &mut ChaCha8Rng) -> SurrogateModel {
    let w = rng.gen_range(3..=8);
    let seed = rng.gen();
    let maps = [0, 1, 2, 3].map(|_| AffineMap {
        scale: rng.gen_range(0.5..2.0),
        offset: rng.gen_range(-0.5..0.5),
    });
    let out = AffineMap {
        scale: rng.gen_range(0.5..2.0),
        offset: rng.gen_range(-1.0..1.0),
    };
    SurrogateModel::glorot(&[4, w, w, 1], seed)
        .expect("valid sizes")
        .with_scaling(maps, out)
}

fn random_point(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [0, 1, 2, 3].map(|_| rng.gen_range(-1.0..1.0))
}

/// `|a − b| / max(|b|, floor)`.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

/// First derivatives against central differences of the value, second
/// derivatives against central differences of the exact first derivative,
/// on `networks` random networks at one random point each. Errors are
/// relative, floored at 1e-3 of the largest magnitude of the same kind.
pub fn input_derivative_check(networks: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..networks {
        let m = random_network(&mut rng);
        let p = random_point(&mut rng);
        let jet = m.input_derivatives(p);
        let shifted = |k: usize, d: f64| {
            let mut q = p;
            q[k] += d;
            q
        };
        let g_floor = 1e-3 * jet.grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let h_floor = 1e-3 * jet.hess.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for k in 0..4 {
            let fd = (m.forward(shifted(k, h)) - m.forward(shifted(k, -h))) / (2.0 * h);
            worst = worst.max(rel_err(fd, jet.grad[k], g_floor));
            if k < 3 {
                let gp = m.input_derivatives(shifted(k, h)).grad[k];
                let gm = m.input_derivatives(shifted(k, -h)).grad[k];
                worst = worst.max(rel_err((gp - gm) / (2.0 * h), jet.hess[k], h_floor));
            }
        }
    }
    CheckResult::at_most(
        "input derivatives vs FD",
        worst,
        1e-5,
        format!("{networks} networks, worst relative error"),
    )
}

/// A scalar touching every jet channel nonlinearly, like a PDE residual.
fn pde_like(j: &Jet<JetDual>) -> JetDual {
    let r = j.grad[3] - (j.hess[0] + j.hess[1] + j.hess[2]) * 0.1 + j.value * j.grad[0] + j.grad[1] * j.grad[2];
    r * r
}

/// Parameter gradients of a PDE-like loss against central differences in
/// each parameter, on `networks` random networks with 3 points each.
pub fn parameter_gradient_check(networks: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..networks {
        let m = random_network(&mut rng);
        let pts: Vec<[f64; 4]> = (0..3).map(|_| random_point(&mut rng)).collect();
        let (_, g) = m.param_gradient(&pts, JetOrder::Full, |_, j| pde_like(j))?;
        let g = g.flatten();
        let floor = 1e-3 * g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let base = m.flatten();
        let loss_at = |theta: &[f64]| -> Result<f64> {
            let mut mm = m.clone();
            mm.set_flat(theta)?;
            Ok(mm.param_gradient(&pts, JetOrder::Full, |_, j| pde_like(j))?.0)
        };
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            worst = worst.max(rel_err(fd, g[i], floor));
        }
    }
    Ok(CheckResult::at_most(
        "parameter gradients vs FD",
        worst,
        1e-5,
        format!("{networks} networks, worst relative error"),
    ))
}

/// Every suite, in order.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        mms_spatial_order()?,
        erfc_surface_flux()?,
        enthalpy_conservation()?,
        input_derivative_check(100, seed),
        parameter_gradient_check(100, seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autodiff_checks_pass() {
        let r = input_derivative_check(20, 3);
        assert!(r.passed, "{r}");
        let r = parameter_gradient_check(5, 3).unwrap();
        assert!(r.passed, "{r}");
    }

    #[test]
    fn rel_err_floor() {
        assert_eq!(rel_err(1.0, 0.0, 0.5), 2.0);
        assert_eq!(rel_err(2.0, 1.0, 0.5), 1.0);
    }

    #[test]
    fn check_display() {
        let r = CheckResult::at_most("x", 1.0, 2.0, "d".into());
        assert!(r.passed);
        assert!(r.to_string().starts_with("PASS x"));
        assert!(!CheckResult::at_least("y", 1.0, 2.0, String::new()).passed);
    }
}
