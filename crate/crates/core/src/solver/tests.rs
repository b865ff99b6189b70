use super::*;
use crate::grid::{build_grid, RefinementBox};
use crate::verify::{audit_solver, mms_error, slab_grid};

fn constant_material() -> MaterialLibrary {
    MaterialLibrary::constant(8000.0, 500.0, 20.0)
}

fn quiet_process() -> ProcessParams {
    ProcessParams {
        power_w: 0.0,
        h_conv: 0.0,
        emissivity: 0.0,
        ..ProcessParams::paper_default()
    }
}

#[test]
fn laser_flux_oracles() {
    let p = ProcessParams::paper_default();
    let centre = laser_flux(p.laser_start_x, 0.0, 0.0, &p);
    assert!((centre / 1.5915494309e10 - 1.0).abs() < 1e-4);
    let off = laser_flux(p.laser_start_x + p.beam_radius, 0.0, 0.0, &p);
    assert!((off / 2.1539279e9 - 1.0).abs() < 1e-4);
    // Radial mode decays across the track, line mode does not.
    let r = laser_flux(p.laser_start_x, p.beam_radius, 0.0, &p);
    assert!((r / off - 1.0).abs() < 1e-12);
    let line = ProcessParams { profile: LaserProfile::Line, ..p.clone() };
    assert_eq!(laser_flux(line.laser_start_x, 1e-3, 0.0, &line), centre);
    // Beam centre moves with v t.
    let moved = laser_flux(p.laser_start_x + p.speed * 50e-6, 0.0, 50e-6, &p);
    assert!((moved / centre - 1.0).abs() < 1e-12);
    let off = ProcessParams { power_w: 0.0, ..p };
    assert_eq!(laser_flux(1e-4, 0.0, 1e-5, &off), 0.0);
}

#[test]
fn uniform_ambient_state_is_steady() {
    let spec = DomainSpec::desk_scale();
    let grid = build_grid(&spec, 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
    let solver = HeatSolver::new(
        grid,
        &spec,
        MaterialLibrary::ss316l(),
        ProcessParams { power_w: 0.0, ..ProcessParams::for_domain(&spec) },
        SolverSettings::default(),
    )
    .unwrap();
    let f0 = solver.initial_field(0.0);
    let out = solver.run(&f0, 5e-6, &[]).unwrap();
    let last = out.last().unwrap();
    for t in &last.temperature {
        assert!((t - 293.0).abs() < 1e-9, "{t}");
    }
}

#[test]
fn surface_flux_matches_erfc_solution() {
    let (lz, nz) = (300.0 * UM, 150);
    let grid = slab_grid(1, 10.0 * UM, nz, lz).unwrap();
    let mat = constant_material();
    let q0 = 1e9;
    let mut bc = BoundaryConditions::insulated();
    bc.top = TopCondition::Flux(q0);
    let settings = SolverSettings { dt: 0.1 * US, ..SolverSettings::default() };
    let solver =
        HeatSolver::with_boundary(grid.clone(), -1.0, mat, quiet_process(), settings, bc).unwrap();
    let t_end = 100.0 * US;
    let f = solver.run(&solver.initial_field(0.0), t_end, &[]).unwrap().pop().unwrap();
    let (k, alpha) = (20.0, 20.0 / (8000.0 * 500.0));
    let s = (alpha * t_end).sqrt();
    let (mut num, mut den) = (0.0, 0.0);
    for n in 0..grid.node_count() {
        let depth = lz - grid.node(n)[2];
        let exact = 2.0 * q0 / k * s / std::f64::consts::PI.sqrt() * (-depth * depth / (4.0 * s * s)).exp()
            - q0 * depth / k * libm::erfc(depth / (2.0 * s));
        let got = f.temperature[n] - 293.0;
        num += (got - exact).powi(2);
        den += exact * exact;
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.02, "relative L2 {rel}");
}

#[test]
fn manufactured_solution_second_order_in_space() {
    let errs: Vec<f64> = [8, 16, 32, 64].iter().map(|&n| mms_error(n, 5.0 * US, true, 300.0 * US).unwrap().0).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "errors {errs:?}");
    }
}

#[test]
fn halving_dt_halves_time_error() {
    let u1 = mms_error(64, 20.0 * US, false, 300.0 * US).unwrap().1;
    let u2 = mms_error(64, 10.0 * US, false, 300.0 * US).unwrap().1;
    let u3 = mms_error(64, 5.0 * US, false, 300.0 * US).unwrap().1;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let ratio = diff(&u1, &u2) / diff(&u2, &u3);
    assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn insulated_run_conserves_enthalpy() {
    let (solver, mut f) = audit_solver(TopCondition::Insulated).unwrap();
    let h0 = solver.enthalpy(&f);
    for _ in 0..10 {
        let (next, report) = solver.step(&f, 0.5 * US).unwrap();
        assert!(report.converged);
        let dh = solver.enthalpy(&next) - solver.enthalpy(&f);
        assert!(dh.abs() <= 1e-6 * h0, "step change {dh} of {h0}");
        assert_eq!(report.boundary_heat, 0.0);
        f = next;
    }
}

#[test]
fn enthalpy_change_equals_boundary_inflow() {
    let (solver, mut f) = audit_solver(TopCondition::Flux(2e8)).unwrap();
    for _ in 0..5 {
        let (next, report) = solver.step(&f, 0.5 * US).unwrap();
        let dh = solver.enthalpy(&next) - solver.enthalpy(&f);
        assert!(
            (dh - report.boundary_heat).abs() <= 1e-6 * report.boundary_heat.abs(),
            "{dh} vs {}",
            report.boundary_heat
        );
        f = next;
    }
}

#[test]
fn enthalpy_constant_property_and_latent_content() {
    let spec = DomainSpec::desk_scale();
    let grid = StructuredGrid::uniform(&spec, [4, 2, 3]).unwrap();
    let solver = HeatSolver::with_boundary(
        grid.clone(),
        spec.interface_z(),
        constant_material(),
        quiet_process(),
        SolverSettings::default(),
        BoundaryConditions::insulated(),
    )
    .unwrap();
    let f = solver.initial_field(0.0);
    assert_eq!(solver.enthalpy(&f) - solver.enthalpy(&f), 0.0);
    let mut g = f.clone();
    g.temperature.iter_mut().for_each(|t| *t += 10.0);
    let v = 400e-6 * 50e-6 * 90e-6;
    let dh = solver.enthalpy(&g) - solver.enthalpy(&f);
    assert!((dh / (8000.0 * 500.0 * v * 10.0) - 1.0).abs() < 1e-9);

    // One substrate node heated from solidus to liquidus.
    let m = MaterialLibrary::ss316l();
    let solver = HeatSolver::with_boundary(
        grid.clone(),
        spec.interface_z(),
        m.clone(),
        quiet_process(),
        SolverSettings::default(),
        BoundaryConditions::insulated(),
    )
    .unwrap();
    let node = grid.index(1, 1, 0);
    let mut a = solver.initial_field(0.0);
    a.temperature[node] = m.solidus_k;
    let mut b = a.clone();
    b.temperature[node] = m.liquidus_k;
    let vol = grid.node_volume(node);
    let dh = solver.enthalpy(&b) - solver.enthalpy(&a);
    let steps = 4000;
    let h = (m.liquidus_k - m.solidus_k) / steps as f64;
    let sensible: f64 = (0..steps)
        .map(|i| {
            let t = m.solidus_k + (i as f64 + 0.5) * h;
            let p = m.props_for_side(t, SolidSide::Bulk);
            p.rho * (p.cp_apparent - p.cp_latent) * h
        })
        .sum();
    let rho_mid = m.props_for_side(0.5 * (m.solidus_k + m.liquidus_k), SolidSide::Bulk).rho;
    let latent = dh - vol * sensible;
    assert!((latent / (rho_mid * vol * m.latent_heat) - 1.0).abs() < 5e-3, "{latent}");
}

fn laser_run(symmetry: bool, t_end: f64) -> (StructuredGrid, ThermalField) {
    let spec = DomainSpec { symmetry, ..DomainSpec::desk_scale() };
    let rb = RefinementBox { spacing: [15.0 * UM, 12.5 * UM, 15.0 * UM], ..RefinementBox::desk_scale() };
    let grid = build_grid(&spec, 50.0 * UM, &rb).unwrap();
    let settings = SolverSettings { dt: 1.0 * US, picard_rel_tol: 1e-9, linear_tol: 1e-12, ..SolverSettings::default() };
    let solver = HeatSolver::new(grid.clone(), &spec, MaterialLibrary::ss316l(), ProcessParams::for_domain(&spec), settings)
        .unwrap();
    let f = solver.run(&solver.initial_field(0.0), t_end, &[]).unwrap().pop().unwrap();
    (grid, f)
}

#[test]
fn half_model_equals_full_model() {
    let (hg, hf) = laser_run(true, 10.0 * US);
    let (fg, ff) = laser_run(false, 10.0 * US);
    assert!(hf.max_temperature() > 1000.0);
    let mut worst: f64 = 0.0;
    for n in 0..hg.node_count() {
        let p = hg.node(n);
        let m = fg.nearest_node(p);
        assert!((0..3).all(|a| (fg.node(m)[a] - p[a]).abs() < 1e-15));
        worst = worst.max((hf.temperature[n] - ff.temperature[m]).abs() / hf.temperature[n]);
    }
    assert!(worst < 1e-6, "worst relative difference {worst}");
}

#[test]
fn laser_run_invariants() {
    let spec = DomainSpec::desk_scale();
    let grid = build_grid(&spec, 40.0 * UM, &RefinementBox::desk_scale()).unwrap();
    let solver = HeatSolver::new(
        grid,
        &spec,
        MaterialLibrary::ss316l(),
        ProcessParams::for_domain(&spec),
        SolverSettings::default(),
    )
    .unwrap();
    let mut prev = solver.initial_field(0.0);
    let mut max_seen: f64 = 0.0;
    solver
        .run_with(&prev.clone(), 30.0 * US, &[], |f, report| {
            assert!(report.converged, "{report:?}");
            f.validate(&solver.grid).unwrap();
            assert!(f.min_temperature() >= 293.0 - 1e-6);
            for n in 0..f.state.len() {
                if prev.state[n] == PhaseState::Melted {
                    assert_eq!(f.state[n], PhaseState::Melted);
                    assert_eq!(f.t_min[n], prev.t_min[n]);
                }
            }
            max_seen = max_seen.max(f.max_temperature());
            prev = f.clone();
        })
        .unwrap();
    assert!(max_seen > solver.material.liquidus_k, "peak {max_seen}");
    assert!(prev.melted_count() > 0);
}

#[test]
fn run_hits_snapshot_times() {
    let grid = slab_grid(4, 100.0 * UM, 4, 40.0 * UM).unwrap();
    let solver = HeatSolver::with_boundary(
        grid,
        -1.0,
        constant_material(),
        quiet_process(),
        SolverSettings { dt: 0.7 * US, ..SolverSettings::default() },
        BoundaryConditions::insulated(),
    )
    .unwrap();
    let f0 = solver.initial_field(0.0);
    let only = solver.run(&f0, 0.0, &[]).unwrap();
    assert_eq!(only.len(), 1);
    assert_eq!(only[0], f0);
    let snaps = solver.run(&f0, 5.0 * US, &[2.0 * US, 1.0 * US]).unwrap();
    let times: Vec<f64> = snaps.iter().map(|f| f.time).collect();
    assert_eq!(times, vec![1.0 * US, 2.0 * US, 5.0 * US]);
    assert!(solver.run(&f0, 5.0 * US, &[6.0 * US]).is_err());
}

#[test]
fn explicit_agrees_with_implicit_for_small_steps() {
    let (lz, nz) = (100.0 * UM, 25);
    let grid = slab_grid(1, 10.0 * UM, nz, lz).unwrap();
    let mut bc = BoundaryConditions::insulated();
    bc.top = TopCondition::Flux(5e8);
    bc.bottom = FaceCondition::Dirichlet(293.0);
    let make = |scheme, dt| {
        HeatSolver::with_boundary(
            grid.clone(),
            -1.0,
            MaterialLibrary::ss316l(),
            quiet_process(),
            SolverSettings { dt, scheme, ..SolverSettings::default() },
            bc,
        )
        .unwrap()
    };
    let ex = make(TimeScheme::Explicit, 0.01 * US);
    let f0 = ex.initial_field(0.0);
    assert!(ex.explicit_dt_limit(&f0) > 0.01 * US);
    let a = ex.run(&f0, 10.0 * US, &[]).unwrap().pop().unwrap();
    let im = make(TimeScheme::BackwardEuler, 0.01 * US);
    let b = im.run(&f0, 10.0 * US, &[]).unwrap().pop().unwrap();
    for (x, y) in a.temperature.iter().zip(&b.temperature) {
        assert!((x - y).abs() < 0.5, "{x} vs {y}");
    }
    let unstable = make(TimeScheme::Explicit, 20.0 * US);
    assert!(unstable.step(&f0, 20.0 * US).is_err());
}

#[test]
fn nonconservative_matches_conservative_for_constant_k() {
    let grid = slab_grid(10, 100.0 * UM, 10, 100.0 * UM).unwrap();
    let mut bc = BoundaryConditions::insulated();
    bc.top = TopCondition::Flux(1e8);
    bc.bottom = FaceCondition::Dirichlet(293.0);
    let run = |nonconservative| {
        let s = HeatSolver::with_boundary(
            grid.clone(),
            -1.0,
            constant_material(),
            quiet_process(),
            SolverSettings { nonconservative, linear_tol: 1e-12, ..SolverSettings::default() },
            bc,
        )
        .unwrap();
        s.run(&s.initial_field(0.0), 5.0 * US, &[]).unwrap().pop().unwrap()
    };
    let (a, b) = (run(false), run(true));
    for (x, y) in a.temperature.iter().zip(&b.temperature) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn invalid_settings_rejected() {
    let grid = slab_grid(2, 10.0 * UM, 2, 10.0 * UM).unwrap();
    let bad = SolverSettings { dt: 0.0, ..SolverSettings::default() };
    assert!(HeatSolver::with_boundary(grid.clone(), -1.0, constant_material(), quiet_process(), bad, BoundaryConditions::insulated()).is_err());
    let bad = ProcessParams { absorptivity: 1.5, ..quiet_process() };
    assert!(HeatSolver::with_boundary(grid, -1.0, constant_material(), bad, SolverSettings::default(), BoundaryConditions::insulated()).is_err());
}
