//! Gauss-Newton iteration with the test norm re-assembled at every iterate.
//!
//! Each step assembles `B`, `l` and `G` at the current background state and
//! solves the condensed least-squares system. The solution carries the
//! increment of the fields `(u, L, T)` and the new values of the pressure and
//! of all interface unknowns.

use std::time::Instant;

use crate::dpg::{assemble, solve_spd, DiscreteState, DofMap};
use crate::error::Result;
use crate::forms::{fld, Kernels};
use crate::mesh::Mesh;
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonConfig {
    /// relative L² field increment at which the iteration stops
    pub tol: f64,
    pub max_iter: usize,
    /// step length; 1 gives full Newton steps
    pub damping: f64,
    /// weight of the `T12 = 0` rows on reflective edges
    pub penalty: Option<f64>,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 20, damping: 1.0, penalty: None }
    }
}

/// One solve of the iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonStep {
    /// `‖Δ‖ / ‖u‖` in the L² norm of all ten field components
    pub increment: f64,
    pub increment_abs: f64,
    /// total residual `η` of the state the step started from
    pub eta: f64,
    pub seconds: f64,
}

/// Outcome of the fitted rate test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadraticVerdict {
    Quadratic,
    NotQuadratic,
    /// fewer than three usable increments
    Indeterminate,
}

impl QuadraticVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            QuadraticVerdict::Quadratic => "true",
            QuadraticVerdict::NotQuadratic => "false",
            QuadraticVerdict::Indeterminate => "indeterminate",
        }
    }

    pub fn is_quadratic(self) -> bool {
        self == QuadraticVerdict::Quadratic
    }
}

impl serde::Serialize for QuadraticVerdict {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl std::fmt::Display for QuadraticVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Slope threshold of [`quadratic_rate_detector`].
pub const QUADRATIC_SLOPE: f64 = 1.7;
/// Increments at or below this are treated as roundoff and ignored.
pub const ROUNDOFF_FLOOR: f64 = 1e-13;

/// Least-squares slope of `log e_{k+1}` against `log e_k` over the final
/// strictly decreasing run of increments (at most four points, roundoff
/// excluded).
pub fn fitted_rate(history: &[f64]) -> Option<f64> {
    let usable: Vec<f64> = history.iter().copied().filter(|&e| e > ROUNDOFF_FLOOR && e.is_finite()).collect();
    let mut start = usable.len();
    while start > 0 && (start == usable.len() || usable[start - 1] > usable[start]) {
        start -= 1;
    }
    let window = &usable[start.max(usable.len().saturating_sub(4))..];
    if window.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = window[..window.len() - 1].iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = window[1..].iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Quadratic convergence test on a history of increment norms.
pub fn quadratic_rate_detector(history: &[f64]) -> QuadraticVerdict {
    match fitted_rate(history) {
        None => QuadraticVerdict::Indeterminate,
        Some(s) if s >= QUADRATIC_SLOPE => QuadraticVerdict::Quadratic,
        Some(_) => QuadraticVerdict::NotQuadratic,
    }
}

#[derive(Clone, Debug)]
pub struct NewtonReport {
    pub steps: Vec<NewtonStep>,
    pub converged: bool,
    pub diverged: bool,
    /// iteration and message of a failed solve
    pub failure: Option<(usize, String)>,
    /// indicators `η_K` of the final state, per active element
    pub indicators: Vec<f64>,
    pub tol: f64,
}

impl NewtonReport {
    pub fn increments(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.increment).collect()
    }

    /// Total residual `(Σ η_K²)^{1/2}` of the final state.
    pub fn final_eta(&self) -> f64 {
        self.indicators.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Number of steps that changed the state by more than the tolerance
    /// (at least one).
    pub fn iterations(&self) -> usize {
        self.steps.iter().filter(|s| s.increment > self.tol).count().max(1)
    }

    pub fn quadratic(&self) -> QuadraticVerdict {
        quadratic_rate_detector(&self.increments())
    }

    pub fn wall_time(&self) -> f64 {
        self.steps.iter().map(|s| s.seconds).sum()
    }
}

fn field_norm_sq(dofs: &DofMap, mesh: &Mesh, fields: &[Vec<f64>]) -> f64 {
    let nf = dofs.layout.nf;
    let mut s = 0.0;
    for (pos, &k) in mesh.active().iter().enumerate() {
        let m = dofs.field_mass(pos);
        for c in 0..crate::forms::NUM_FIELDS {
            let v = &fields[k][c * nf..(c + 1) * nf];
            for i in 0..nf {
                let mv: f64 = (0..nf).map(|j| m[i + j * nf] * v[j]).sum();
                s += v[i] * mv;
            }
        }
    }
    s
}

/// Runs Gauss-Newton from `init`. A failed solve ends the iteration with the
/// last good state and the failure recorded in the report.
pub fn gauss_newton(
    mesh: &Mesh,
    kernels: &Kernels,
    params: &ModelParams,
    dofs: &DofMap,
    init: DiscreteState,
    cfg: &NewtonConfig,
) -> Result<(DiscreteState, NewtonReport)> {
    params.validate()?;
    let lay = kernels.layout;
    let nf = lay.nf;
    let p_off = lay.field_offset(fld::P);
    let mut state = init;
    let mut report =
        NewtonReport { steps: Vec::new(), converged: false, diverged: false, failure: None, indicators: Vec::new(), tol: cfg.tol };
    let mut iter = 0;
    loop {
        let t0 = Instant::now();
        let asm = match assemble(mesh, kernels, params, dofs, &state, cfg.penalty) {
            Ok(a) => a,
            Err(e) => {
                report.failure = Some((iter, e.to_string()));
                break;
            }
        };
        report.indicators = asm.indicators;
        if report.converged || report.diverged || iter == cfg.max_iter {
            break;
        }
        let eta = report.final_eta();
        let x = match solve_spd(asm.system) {
            Ok((x, _)) => x,
            Err(e) => {
                report.failure = Some((iter, e.to_string()));
                break;
            }
        };
        let mut delta = vec![Vec::new(); state.fields.len()];
        for &k in mesh.active() {
            let off = dofs.field_offset(k);
            let y = &x[off..off + lay.num_field_dofs()];
            let old = &mut state.fields[k];
            let mut d: Vec<f64> = y.to_vec();
            for i in 0..nf {
                d[p_off + i] -= old[p_off + i];
            }
            for (o, di) in old.iter_mut().zip(d.iter_mut()) {
                *di *= cfg.damping;
                *o += *di;
            }
            delta[k] = d;
        }
        for (s, xi) in state.iface.iter_mut().zip(&x) {
            *s += cfg.damping * (xi - *s);
        }
        let dn = field_norm_sq(dofs, mesh, &delta).sqrt();
        let un = field_norm_sq(dofs, mesh, &state.fields).sqrt();
        let rel = if un > 0.0 { dn / un } else { dn };
        report.steps.push(NewtonStep { increment: rel, increment_abs: dn, eta, seconds: t0.elapsed().as_secs_f64() });
        iter += 1;
        if !rel.is_finite() {
            report.diverged = true;
        } else if rel <= cfg.tol {
            report.converged = true;
        } else if iter > 3 {
            let inc = &report.steps;
            if inc[iter - 1].increment > 10.0 * inc[iter - 4].increment {
                report.diverged = true;
            }
        }
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detector_examples() {
        assert_eq!(quadratic_rate_detector(&[1e-1, 1e-2, 1e-4, 1e-8]), QuadraticVerdict::Quadratic);
        assert_eq!(quadratic_rate_detector(&[1e-1, 5e-2, 2.5e-2, 1.2e-2]), QuadraticVerdict::NotQuadratic);
        assert!((fitted_rate(&[1e-1, 1e-2, 1e-4, 1e-8]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detector_needs_three_points() {
        assert_eq!(quadratic_rate_detector(&[]), QuadraticVerdict::Indeterminate);
        assert_eq!(quadratic_rate_detector(&[1e-1, 1e-2]), QuadraticVerdict::Indeterminate);
        assert_eq!(quadratic_rate_detector(&[1e-3, 1e-6, 1e-16, 0.0]), QuadraticVerdict::Indeterminate);
    }

    #[test]
    fn detector_uses_final_decaying_window() {
        // an early stagnation followed by quadratic decay
        let h = [1.0, 0.9, 1.1, 0.5, 1e-1, 1e-2, 1e-4, 1e-8, 1e-15];
        assert_eq!(quadratic_rate_detector(&h), QuadraticVerdict::Quadratic);
        let h = [1e-1, 1e-2, 1e-4, 1e-8, 1e-7, 5e-8, 2.5e-8];
        assert_eq!(quadratic_rate_detector(&h), QuadraticVerdict::NotQuadratic);
    }

    #[test]
    fn iterations_count_state_changing_steps() {
        let step = |increment| NewtonStep { increment, increment_abs: increment, eta: 0.0, seconds: 0.0 };
        let mut r = NewtonReport {
            steps: vec![step(1.0), step(1e-15)],
            converged: true,
            diverged: false,
            failure: None,
            indicators: vec![3.0, 4.0],
            tol: 1e-8,
        };
        assert_eq!(r.iterations(), 1);
        assert!((r.final_eta() - 5.0).abs() < 1e-15);
        r.steps = vec![step(0.0)];
        assert_eq!(r.iterations(), 1);
    }
}
