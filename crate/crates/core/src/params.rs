//! Physical and nondimensional model constants.

use std::fmt;
use std::sync::Arc;

use crate::error::Error;

/// Body-force density `g(x)` entering the momentum load as `(g, v)`.
pub type Force = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    OldroydB,
    Giesekus,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::OldroydB => "oldroyd_b",
            Model::Giesekus => "giesekus",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "oldroyd_b" | "oldroydb" => Ok(Model::OldroydB),
            "giesekus" => Ok(Model::Giesekus),
            other => Err(format!("unknown model `{other}` (expected oldroyd_b or giesekus)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    Stokes,
    NavierStokes,
}

/// Model constants. Navier-Stokes coupling is active exactly when `rho > 0`.
#[derive(Clone)]
pub struct ModelParams {
    pub rho: f64,
    pub eta_s: f64,
    pub eta_p: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub l0: f64,
    pub u_bar: f64,
    pub radius: f64,
    pub model: Model,
    pub force: Option<Force>,
}

impl fmt::Debug for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelParams")
            .field("rho", &self.rho)
            .field("eta_s", &self.eta_s)
            .field("eta_p", &self.eta_p)
            .field("lambda", &self.lambda)
            .field("alpha", &self.alpha)
            .field("l0", &self.l0)
            .field("u_bar", &self.u_bar)
            .field("radius", &self.radius)
            .field("model", &self.model)
            .field("force", &self.force.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::nondimensional(0.1, 0.0, 0.59, 0.0, Model::OldroydB)
    }
}

impl ModelParams {
    /// Parameters with `u_bar = R = eta = l0 = 1`, so `lambda = Wi`,
    /// `rho = Re`, `eta_s = beta`, `eta_p = 1 - beta`.
    pub fn nondimensional(wi: f64, re: f64, beta: f64, alpha: f64, model: Model) -> Self {
        Self { rho: re, eta_s: beta, eta_p: 1.0 - beta, lambda: wi, alpha, l0: 1.0, u_bar: 1.0, radius: 1.0, model, force: None }
    }

    /// Parameters from dimensional inputs; `wi` and `re` follow from them.
    #[allow(clippy::too_many_arguments)]
    pub fn dimensional(rho: f64, eta_s: f64, eta_p: f64, lambda: f64, alpha: f64, u_bar: f64, radius: f64, l0: f64, model: Model) -> Self {
        Self { rho, eta_s, eta_p, lambda, alpha, l0, u_bar, radius, model, force: None }
    }

    pub fn with_force(mut self, f: Force) -> Self {
        self.force = Some(f);
        self
    }

    pub fn eta(&self) -> f64 {
        self.eta_s + self.eta_p
    }

    pub fn beta(&self) -> f64 {
        self.eta_s / self.eta()
    }

    pub fn reynolds(&self) -> f64 {
        self.rho * self.u_bar * self.radius / self.eta()
    }

    pub fn weissenberg(&self) -> f64 {
        self.lambda * self.u_bar / self.radius
    }

    pub fn coupling(&self) -> Coupling {
        if self.rho > 0.0 {
            Coupling::NavierStokes
        } else {
            Coupling::Stokes
        }
    }

    /// Coefficient `alpha * lambda / eta_p` of the quadratic Giesekus term
    /// (zero for Oldroyd-B).
    pub fn giesekus_coeff(&self) -> f64 {
        match self.model {
            Model::Giesekus => self.alpha * self.lambda / self.eta_p,
            Model::OldroydB => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let mut errs = Vec::new();
        if !(self.eta_s > 0.0) {
            errs.push(format!("eta_s must be positive (got {})", self.eta_s));
        }
        if !(self.eta_p > 0.0) {
            errs.push(format!("eta_p must be positive (got {})", self.eta_p));
        }
        if !(self.lambda >= 0.0) {
            errs.push(format!("lambda must be non-negative (got {})", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            errs.push(format!("alpha must lie in [0, 1] (got {})", self.alpha));
        }
        if !(self.rho >= 0.0) {
            errs.push(format!("rho must be non-negative (got {})", self.rho));
        }
        for (name, v) in [("l0", self.l0), ("u_bar", self.u_bar), ("radius", self.radius)] {
            if !(v > 0.0) {
                errs.push(format!("{name} must be positive (got {v})"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nondimensional_numbers_round_trip() {
        for &(wi, re) in &[(0.1, 0.0), (0.3, 1.0), (0.7, 0.01)] {
            let p = ModelParams::nondimensional(wi, re, 0.59, 0.0, Model::OldroydB);
            assert!((p.weissenberg() - wi).abs() <= 1e-14);
            assert!((p.reynolds() - re).abs() <= 1e-14);
            assert!((p.beta() - 0.59).abs() <= 1e-14);
        }
        let d = ModelParams::dimensional(2.0, 0.3, 0.7, 0.5, 0.0, 3.0, 2.0, 1.0, Model::OldroydB);
        assert!((d.reynolds() - 2.0 * 3.0 * 2.0 / 1.0).abs() < 1e-14);
        assert!((d.weissenberg() - 0.5 * 3.0 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn validation_lists_all_problems() {
        let mut p = ModelParams::default();
        p.eta_s = 0.0;
        p.alpha = 2.0;
        let msg = p.validate().unwrap_err().to_string();
        assert!(msg.contains("eta_s") && msg.contains("alpha"));
        assert_eq!(ModelParams::default().coupling(), Coupling::Stokes);
    }
}
