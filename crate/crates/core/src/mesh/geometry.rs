//! Root-element maps and the confined-cylinder geometry.
//!
//! Every element is the image of a sub-square of a *root* element's
//! reference square. Root maps are transfinite (Gordon-Hall) blends of their
//! four edge curves, so edges lying on the cylinder are exact circular arcs
//! and straight edges are parametrized linearly.

use crate::error::Error;

/// A boundary curve of a root element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Curve {
    Line,
    /// Circular arc about `center` with radius `radius`, traversed with
    /// linearly varying angle along the shorter way.
    Arc {
        center: [f64; 2],
        radius: f64,
    },
}

/// Transfinite map of one root quadrilateral.
#[derive(Clone, Debug, PartialEq)]
pub struct RootMap {
    /// Corners in counterclockwise order.
    pub corners: [[f64; 2]; 4],
    /// Curve of local edge `e` (from corner `e` to corner `e+1`).
    pub curves: [Curve; 4],
}

fn lerp(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

fn angle_span(c: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let ta = (a[1] - c[1]).atan2(a[0] - c[0]);
    let tb = (b[1] - c[1]).atan2(b[0] - c[0]);
    let mut d = tb - ta;
    while d > std::f64::consts::PI {
        d -= 2.0 * std::f64::consts::PI;
    }
    while d < -std::f64::consts::PI {
        d += 2.0 * std::f64::consts::PI;
    }
    (ta, d)
}

/// Point and derivative of `curve` from `a` (s=0) to `b` (s=1).
pub fn curve_eval(curve: &Curve, a: [f64; 2], b: [f64; 2], s: f64) -> ([f64; 2], [f64; 2]) {
    match *curve {
        Curve::Line => (lerp(a, b, s), [b[0] - a[0], b[1] - a[1]]),
        Curve::Arc { center, radius } => {
            let (t0, d) = angle_span(center, a, b);
            let t = t0 + s * d;
            let (sn, cs) = t.sin_cos();
            // snap the ends to the exact stored corners
            let x = if s == 0.0 {
                a
            } else if s == 1.0 {
                b
            } else {
                [center[0] + radius * cs, center[1] + radius * sn]
            };
            (x, [-radius * d * sn, radius * d * cs])
        }
    }
}

impl RootMap {
    pub fn straight(corners: [[f64; 2]; 4]) -> Self {
        Self { corners, curves: [Curve::Line; 4] }
    }

    pub fn is_curved(&self) -> bool {
        self.curves.iter().any(|c| matches!(c, Curve::Arc { .. }))
    }

    /// Physical point and Jacobian `d(x,y)/d(xi,eta)` (row = physical
    /// coordinate) at reference point `(xi, eta)` in `[-1,1]^2`.
    pub fn eval(&self, xi: f64, eta: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let s = 0.5 * (xi + 1.0);
        let t = 0.5 * (eta + 1.0);
        let [p0, p1, p2, p3] = self.corners;
        // bottom: p0 -> p1 in s; right: p1 -> p2 in t;
        // top: p3 -> p2 in s (edge 2 runs p2 -> p3); left: p0 -> p3 in t (edge 3 runs p3 -> p0)
        let (b, db) = curve_eval(&self.curves[0], p0, p1, s);
        let (r, dr) = curve_eval(&self.curves[1], p1, p2, t);
        let (tp, dtp) = {
            let (x, d) = curve_eval(&self.curves[2], p2, p3, 1.0 - s);
            (x, [-d[0], -d[1]])
        };
        let (l, dl) = {
            let (x, d) = curve_eval(&self.curves[3], p3, p0, 1.0 - t);
            (x, [-d[0], -d[1]])
        };
        let mut x = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let bil = (1.0 - s) * (1.0 - t) * p0[k] + s * (1.0 - t) * p1[k] + s * t * p2[k] + (1.0 - s) * t * p3[k];
            x[k] = (1.0 - t) * b[k] + t * tp[k] + (1.0 - s) * l[k] + s * r[k] - bil;
            let dbil_s = -(1.0 - t) * p0[k] + (1.0 - t) * p1[k] + t * p2[k] - t * p3[k];
            let dbil_t = -(1.0 - s) * p0[k] - s * p1[k] + s * p2[k] + (1.0 - s) * p3[k];
            let dxs = (1.0 - t) * db[k] + t * dtp[k] - l[k] + r[k] - dbil_s;
            let dxt = -b[k] + tp[k] + (1.0 - s) * dl[k] + s * dr[k] - dbil_t;
            jac[k][0] = 0.5 * dxs;
            jac[k][1] = 0.5 * dxt;
        }
        // snap exact corners
        if (xi.abs() == 1.0) && (eta.abs() == 1.0) {
            let idx = match (xi > 0.0, eta > 0.0) {
                (false, false) => 0,
                (true, false) => 1,
                (true, true) => 2,
                (false, true) => 3,
            };
            x = self.corners[idx];
        }
        (x, jac)
    }
}

/// Confined-cylinder geometry: a half channel `y in [0, H]` with a cylinder
/// of radius `R` centred on the symmetry line.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchGeometry {
    pub cylinder_radius: f64,
    pub half_channel_height: f64,
    pub upstream_length: f64,
    pub downstream_length: f64,
    pub cylinder_center: [f64; 2],
}

impl Default for BenchGeometry {
    fn default() -> Self {
        Self { cylinder_radius: 1.0, half_channel_height: 2.0, upstream_length: 7.5, downstream_length: 7.5, cylinder_center: [0.0, 0.0] }
    }
}

impl BenchGeometry {
    pub fn validate(&self) -> Result<(), Error> {
        let r = self.cylinder_radius;
        let mut errs = Vec::new();
        if !(r > 0.0) {
            errs.push(format!("cylinder radius must be positive (got {r})"));
        }
        if !(self.half_channel_height > r) {
            errs.push(format!("half channel height {} must exceed the cylinder radius {r}", self.half_channel_height));
        }
        if !(self.upstream_length >= 2.0 * r) {
            errs.push(format!("upstream length {} must be at least 2R", self.upstream_length));
        }
        if !(self.downstream_length >= 2.0 * r) {
            errs.push(format!("downstream length {} must be at least 2R", self.downstream_length));
        }
        if self.cylinder_center[1] != 0.0 {
            errs.push("the cylinder centre must lie on the symmetry line y = 0".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }

    /// Analytic area of the half-channel minus the half-disk.
    pub fn area(&self) -> f64 {
        let r = self.cylinder_radius;
        (self.upstream_length + self.downstream_length) * self.half_channel_height - 0.5 * std::f64::consts::PI * r * r
    }

    pub fn x_min(&self) -> f64 {
        self.cylinder_center[0] - self.upstream_length
    }

    pub fn x_max(&self) -> f64 {
        self.cylinder_center[0] + self.downstream_length
    }
}
