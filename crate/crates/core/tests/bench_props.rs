use std::f64::consts::PI;
use std::sync::Arc;

use viscodpg::bench::{bench_conditions, channel_mesh, drag_estimates, sample_gamma, Poiseuille};
use viscodpg::dpg::{assemble, local_systems, BoundarySpec, DiscreteState, DofMap, FluxFn};
use viscodpg::forms::{fld, Kernels, NUM_FIELDS};
use viscodpg::mesh::{build_initial_mesh, BenchGeometry, EdgeTag, Mesh};
use viscodpg::nonlinear::{gauss_newton, NewtonConfig};
use viscodpg::spaces::PolyOrders;
use viscodpg::{Model, ModelParams};

fn kernels() -> Kernels {
    Kernels::new(PolyOrders::new(2, 2))
}

fn params(wi: f64) -> ModelParams {
    ModelParams::nondimensional(wi, 0.0, 0.59, 0.0, Model::OldroydB)
}

/// Residuals of the steady Oldroyd-B system for the unidirectional flow
/// `u = (u1(y), 0)`: x- and y-momentum, the three constitutive components
/// and the wall condition. Derivatives are central differences; every
/// convective term `u·∇` vanishes because nothing depends on `x` except `p`.
fn channel_residuals(prof: &Poiseuille, y: f64) -> [f64; 6] {
    let h = 1e-4;
    let dy = |f: &dyn Fn(f64) -> f64, s: f64| (f(s + h) - f(s - h)) / (2.0 * h);
    let p = |x: f64, _y: f64| prof.pressure_gradient() * x;
    let dpdx = (p(1.0 + h, y) - p(1.0 - h, y)) / (2.0 * h);
    let dpdy = (p(1.0, y + h) - p(1.0, y - h)) / (2.0 * h);
    let g = dy(&|s| prof.u1(s), y);
    let t22 = 0.0;
    let (t11, t12) = (prof.t11(y), prof.t12(y));
    let lam = prof.lambda;
    let r = prof.radius;
    [
        -dpdx + prof.eta_s * dy(&|s| dy(&|q| prof.u1(q), s), y) + dy(&|s| prof.t12(s), y),
        -dpdy,
        t11 - lam * 2.0 * g * t12,
        t12 - lam * g * t22 - prof.eta_p * g,
        t22,
        prof.u1(2.0 * r).abs() + prof.u1(-2.0 * r).abs(),
    ]
}

#[test]
fn channel_profiles_solve_the_steady_equations() {
    for wi in [0.0, 0.1, 0.7] {
        let prof = Poiseuille::new(&params(wi), &BenchGeometry::default());
        for y in [-1.7, -0.3, 0.0, 0.9, 1.95] {
            for (i, r) in channel_residuals(&prof, y).iter().enumerate() {
                assert!(r.abs() < 1e-6, "wi {wi}, y {y}: residual {i} = {r:e}");
            }
        }
        // mean velocity over the full channel height equals ū
        let n = 2000;
        let mean: f64 = (0..n).map(|i| prof.u1(-2.0 + 4.0 * (i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 1e-6);
    }
}

fn cylinder_mesh() -> (Mesh, BenchGeometry) {
    let geom = BenchGeometry::default();
    (build_initial_mesh(&geom).unwrap(), geom)
}

#[test]
fn constant_cylinder_flux_gives_closed_form_drag_and_error() {
    let (mesh, geom) = cylinder_mesh();
    let k = kernels();
    let p = params(0.1);
    let c = 0.75;
    let mut bcs = bench_conditions(&p, &geom);
    let f: FluxFn = Arc::new(move |_, _| c);
    bcs.set(EdgeTag::Cylinder, BoundarySpec { trace: BoundarySpec::zero_trace().trace, flux: [Some(f), None, None, None, None] });
    let dofs = DofMap::new(&mesh, &k, &bcs, &p).unwrap();
    let state = DiscreteState::zero(&mesh, &dofs);
    let d = drag_estimates(&mesh, &k, &p, &dofs, &state);
    let r = geom.cylinder_radius;
    // the flux is given for the element-outward normal, which points into the cylinder
    let expected = -2.0 * c * PI * r / (p.eta() * p.u_bar);
    assert!((d.flux - expected).abs() < 1e-10 * expected.abs(), "{} vs {expected}", d.flux);
    assert_eq!(d.field, 0.0);
    let mismatch = (2.0 * PI * r).sqrt() * c * (PI * r).sqrt();
    assert!((d.error_half - mismatch).abs() < 1e-10 * mismatch);
    assert!((d.error_symmetric - 2f64.sqrt() * mismatch).abs() < 1e-10 * mismatch);
    assert_eq!(d.error, d.error_half);
}

fn projected(fields: impl Fn([f64; 2]) -> [f64; NUM_FIELDS]) -> (Mesh, Kernels, ModelParams, DofMap, DiscreteState) {
    let (mesh, geom) = cylinder_mesh();
    let k = kernels();
    let p = params(0.1);
    let dofs = DofMap::new(&mesh, &k, &bench_conditions(&p, &geom), &p).unwrap();
    let state = DiscreteState::project(&mesh, &k, &dofs, fields);
    (mesh, k, p, dofs, state)
}

#[test]
fn unit_shear_stress_gives_field_drag_four_r_over_eta() {
    let (mesh, k, p, dofs, state) = projected(|_| {
        let mut f = [0.0; NUM_FIELDS];
        f[fld::T12] = 1.0;
        f
    });
    let d = drag_estimates(&mesh, &k, &p, &dofs, &state);
    // ∫ n₂ over the upper half circle with the normal pointing into the cylinder is −2R
    let expected = 4.0 * 1.0 / (p.eta() * p.u_bar);
    assert!((d.field - expected).abs() < 1e-10 * expected, "{} vs {expected}", d.field);
}

#[test]
fn isotropic_stress_exerts_no_drag() {
    // σ = I through p = −1; ∫ n₁ over the upper half circle vanishes
    let (mesh, k, p, dofs, state) = projected(|_| {
        let mut f = [0.0; NUM_FIELDS];
        f[fld::P] = -1.0;
        f
    });
    let d = drag_estimates(&mesh, &k, &p, &dofs, &state);
    assert!(d.field.abs() < 1e-12, "{}", d.field);
}

#[test]
fn zero_state_gives_zero_drag_and_samples() {
    let (mesh, geom) = cylinder_mesh();
    let k = kernels();
    let p = params(0.1);
    let mut bcs = bench_conditions(&p, &geom);
    bcs.set(EdgeTag::Cylinder, BoundarySpec::zero_trace());
    let dofs = DofMap::new(&mesh, &k, &bcs, &p).unwrap();
    let state = DiscreteState::zero(&mesh, &dofs);
    let d = drag_estimates(&mesh, &k, &p, &dofs, &state);
    assert_eq!((d.flux, d.field, d.error), (0.0, 0.0, 0.0));
    let g = sample_gamma(&mesh, &k, &geom, &dofs, &state, 50);
    assert_eq!(g.len(), 50);
    for s in &g {
        assert_eq!((s.t11, s.t12, s.t22), (0.0, 0.0, 0.0));
        assert!(s.that1 == 0.0 || s.that1.is_nan());
    }
}

#[test]
fn gamma_runs_over_the_cylinder_and_the_wake() {
    let (mesh, geom) = cylinder_mesh();
    let k = kernels();
    let p = params(0.1);
    let dofs = DofMap::new(&mesh, &k, &bench_conditions(&p, &geom), &p).unwrap();
    let state = DiscreteState::zero(&mesh, &dofs);
    let g = sample_gamma(&mesh, &k, &geom, &dofs, &state, 200);
    let r = geom.cylinder_radius;
    let arc = PI * r;
    let total = arc + geom.downstream_length - r;
    assert!(g.windows(2).all(|w| w[1].s > w[0].s));
    assert!((g[0].x + r).abs() < 1e-9 && g[0].y.abs() < 1e-9);
    let last = g.last().unwrap();
    assert!((last.s - total).abs() < 1e-9 && (last.x - geom.x_max()).abs() < 1e-9 && last.y.abs() < 1e-12);
    for s in &g {
        if s.s < arc - 1e-9 {
            assert!((s.x.hypot(s.y) - r).abs() < 1e-9, "({}, {}) off the cylinder", s.x, s.y);
            assert!(s.that1.is_finite());
            // arclength from (−R, 0) is R(π − θ)
            assert!((r * (PI - s.y.atan2(s.x)) - s.s).abs() < 1e-9);
        } else if s.s > arc + 1e-9 {
            assert!(s.y.abs() < 1e-12 && s.that1.is_nan());
        }
    }
}

fn channel_setup(wi: f64, nx: usize, ny: usize, penalty: Option<f64>) -> f64 {
    let geom = BenchGeometry::default();
    let mesh = channel_mesh(&geom, nx, ny);
    let k = kernels();
    let p = params(wi);
    let dofs = DofMap::new(&mesh, &k, &bench_conditions(&p, &geom), &p).unwrap();
    let prof = Poiseuille::new(&p, &geom);
    let x_mid = 0.5 * (geom.x_min() + geom.x_max());
    let init = DiscreteState::project(&mesh, &k, &dofs, |x| prof.fields(x, x_mid));
    let cfg = NewtonConfig { max_iter: 1, penalty, ..NewtonConfig::default() };
    let (_, rep) = gauss_newton(&mesh, &k, &p, &dofs, init, &cfg).unwrap();
    rep.steps[0].increment
}

#[test]
fn newtonian_channel_profiles_are_a_fixed_point() {
    let inc = channel_setup(0.0, 6, 2, None);
    assert!(inc <= 1e-8, "first increment {inc:e}");
    // T12 vanishes on the symmetry line, so the penalty leaves the fixed point intact
    let inc = channel_setup(0.0, 6, 2, Some(100.0));
    assert!(inc <= 1e-8, "first increment with penalty {inc:e}");
}

#[test]
fn viscoelastic_channel_increment_shrinks_under_refinement() {
    let coarse = channel_setup(0.1, 6, 2, None);
    let fine = channel_setup(0.1, 12, 4, None);
    assert!(fine < 0.5 * coarse, "coarse {coarse:e}, fine {fine:e}");
}

#[test]
fn penalty_rows_vanish_for_zero_weight_and_zero_shear() {
    let (mesh, geom) = cylinder_mesh();
    let k = kernels();
    let p = params(0.4);
    let dofs = DofMap::new(&mesh, &k, &bench_conditions(&p, &geom), &p).unwrap();
    let state = DiscreteState::zero(&mesh, &dofs);
    let plain = assemble(&mesh, &k, &p, &dofs, &state, None).unwrap();
    let zero_w = assemble(&mesh, &k, &p, &dofs, &state, Some(0.0)).unwrap();
    assert_eq!(plain.system.rhs, zero_w.system.rhs);
    assert_eq!(plain.indicators, zero_w.indicators);
    let locals = local_systems(&mesh, &k, &p, &dofs, &state, Some(100.0)).unwrap();
    let with_rows = locals.iter().filter(|ls| !ls.pen_rhs.is_empty()).count();
    let on_line = mesh.active().iter().filter(|&&e| mesh.has_tag(e, EdgeTag::Reflective)).count();
    assert_eq!(with_rows, on_line);
    assert!(locals.iter().all(|ls| ls.pen_rhs.iter().all(|&v| v == 0.0)));
}
