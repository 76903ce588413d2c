//! The regularizing factors
//!
//! ```text
//! F  = Σ_l Σ_j -(Z_l/2)|x_j - R_l|        + Σ_{j<k} ¼|x_j - x_k|
//! F₁ = Σ_l Σ_j -(Z_l/2)√(|x_j - R_l|²+1)  + Σ_{j<k} ¼√(|x_j - x_k|²+1)
//! ```
//!
//! `ΔF = V` away from coalescences, and `F - F₁` together with all
//! derivatives of `F₁` are bounded on ℝ^{3N}. Writing `ψ = exp(F - F₁)ψ₁`,
//! the eigenvalue equation becomes `Lψ₁ = 0` with
//!
//! ```text
//! L = Δ + 2∇(F - F₁)·∇ + (|∇(F - F₁)|² - ΔF₁ + E)
//! ```
//!
//! whose coefficients are bounded.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd;
use crate::geom::{self, Vec3};
use crate::system::{Configuration, MolecularSystem, COALESCENCE_TOLERANCE};
use crate::transform::ClusterFrame;
use crate::wavefunction::WavefunctionModel;

/// Weight of each pair term in `F` and `F₁`.
pub const PAIR_WEIGHT: f64 = 0.25;

/// One distance term `weight · f(|u|)` of `F` (with `f(r) = r`) or of `F₁`
/// (with `f(r) = √(r²+1)`), with `u = x_j - R_l` or `u = x_j - x_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Term {
    Nuclear { electron: usize, center: Vec3, weight: f64 },
    Pair { first: usize, second: usize },
}

impl Term {
    fn weight(&self) -> f64 {
        match *self {
            Term::Nuclear { weight, .. } => weight,
            Term::Pair { .. } => PAIR_WEIGHT,
        }
    }

    fn vector(&self, x: &[Vec3]) -> Vec3 {
        match *self {
            Term::Nuclear { electron, center, .. } => geom::sub(x[electron], center),
            Term::Pair { first, second } => geom::sub(x[first], x[second]),
        }
    }

    /// Adds `s · v` to the gradient slots touched by this term.
    fn scatter(&self, grad: &mut [f64], v: Vec3, s: f64) {
        match *self {
            Term::Nuclear { electron, .. } => {
                for a in 0..3 {
                    grad[3 * electron + a] += s * v[a];
                }
            }
            Term::Pair { first, second } => {
                for a in 0..3 {
                    grad[3 * first + a] += s * v[a];
                    grad[3 * second + a] -= s * v[a];
                }
            }
        }
    }

    /// Number of electron blocks the term depends on; the Laplacian in ℝ^{3N}
    /// of a pair term is twice its three-dimensional Laplacian in `u`.
    fn laplacian_multiplicity(&self) -> f64 {
        match self {
            Term::Nuclear { .. } => 1.0,
            Term::Pair { .. } => 2.0,
        }
    }
}

/// First- and zeroth-order coefficients of the operator `L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorLCoefficients {
    /// `b = 2∇(F - F₁)`.
    pub drift: Vec<f64>,
    /// `W = |∇(F - F₁)|² - ΔF₁ + E`.
    pub potential: f64,
}

/// Uniform bounds on the factor differences and the coefficients of `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorBounds {
    /// `sup |F - F₁|`, the sum of all term weights.
    pub difference: f64,
    /// `sup ‖∇(F - F₁)‖∞`.
    pub gradient: f64,
    /// `sup |ΔF₁|`.
    pub laplacian_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizingFactors {
    system: MolecularSystem,
    terms: Vec<Term>,
}

impl RegularizingFactors {
    pub fn new(system: &MolecularSystem) -> Self {
        let n = system.electron_count();
        let mut terms = Vec::new();
        for nucleus in system.nuclei() {
            for electron in 0..n {
                terms.push(Term::Nuclear {
                    electron,
                    center: nucleus.position,
                    weight: -0.5 * nucleus.charge,
                });
            }
        }
        for first in 0..n {
            for second in first + 1..n {
                terms.push(Term::Pair { first, second });
            }
        }
        Self {
            system: system.clone(),
            terms,
        }
    }

    pub fn system(&self) -> &MolecularSystem {
        &self.system
    }

    fn check(&self, config: &Configuration) {
        assert_eq!(
            config.electron_count(),
            self.system.electron_count(),
            "configuration size does not match the system"
        );
    }

    /// `F(x)`; finite everywhere, including at coalescences.
    pub fn eval_f(&self, config: &Configuration) -> f64 {
        self.check(config);
        let x = config.positions();
        self.terms
            .iter()
            .map(|t| t.weight() * geom::norm(t.vector(x)))
            .sum()
    }

    /// `F₁(x)`.
    pub fn eval_f1(&self, config: &Configuration) -> f64 {
        self.check(config);
        let x = config.positions();
        self.terms
            .iter()
            .map(|t| {
                let u = t.vector(x);
                t.weight() * (geom::dot(u, u) + 1.0).sqrt()
            })
            .sum()
    }

    /// `∇F`; refused within the coalescence tolerance.
    pub fn grad_f(&self, config: &Configuration) -> Result<Vec<f64>> {
        self.system.ensure_separated(config, COALESCENCE_TOLERANCE)?;
        let x = config.positions();
        let mut g = vec![0.0; config.flat().len()];
        for t in &self.terms {
            let u = t.vector(x);
            t.scatter(&mut g, u, t.weight() / geom::norm(u));
        }
        Ok(g)
    }

    /// `∇F₁`, globally defined.
    pub fn grad_f1(&self, config: &Configuration) -> Vec<f64> {
        self.check(config);
        let x = config.positions();
        let mut g = vec![0.0; config.flat().len()];
        for t in &self.terms {
            let u = t.vector(x);
            t.scatter(&mut g, u, t.weight() / (geom::dot(u, u) + 1.0).sqrt());
        }
        g
    }

    /// `ΔF` from `Δ|u| = 2/|u|` in ℝ³.
    pub fn laplacian_f(&self, config: &Configuration) -> Result<f64> {
        self.system.ensure_separated(config, COALESCENCE_TOLERANCE)?;
        let x = config.positions();
        Ok(self
            .terms
            .iter()
            .map(|t| t.laplacian_multiplicity() * t.weight() * 2.0 / geom::norm(t.vector(x)))
            .sum())
    }

    /// `ΔF₁` from `Δ√(|u|²+1) = 2/s + 1/s³`, `s = √(|u|²+1)`.
    pub fn laplacian_f1(&self, config: &Configuration) -> f64 {
        self.check(config);
        let x = config.positions();
        self.terms
            .iter()
            .map(|t| {
                let u = t.vector(x);
                let s = (geom::dot(u, u) + 1.0).sqrt();
                t.laplacian_multiplicity() * t.weight() * (2.0 / s + 1.0 / (s * s * s))
            })
            .sum()
    }

    /// `∇(F - F₁)`.
    pub fn grad_difference(&self, config: &Configuration) -> Result<Vec<f64>> {
        let gf = self.grad_f(config)?;
        let gf1 = self.grad_f1(config);
        Ok(gf.iter().zip(&gf1).map(|(a, b)| a - b).collect())
    }

    /// `ΔF(x) - V(x)`, zero up to rounding.
    pub fn verify_ansatz(&self, config: &Configuration) -> Result<f64> {
        let lap = self.laplacian_f(config)?;
        let v = self.system.potential(config)?;
        Ok(lap - v)
    }

    /// `ψ₁ = exp(F₁ - F)·ψ`.
    pub fn psi1<M>(&self, model: &M, config: &Configuration) -> f64
    where
        M: WavefunctionModel + ?Sized,
    {
        (self.eval_f1(config) - self.eval_f(config)).exp() * model.eval(config)
    }

    /// `exp(F - F₁)`, the factor restoring `ψ` from `ψ₁`.
    pub fn cusp_factor(&self, config: &Configuration) -> f64 {
        (self.eval_f(config) - self.eval_f1(config)).exp()
    }

    pub fn l_coefficients(&self, config: &Configuration, energy: f64) -> Result<OperatorLCoefficients> {
        let g = self.grad_difference(config)?;
        let g2: f64 = g.iter().map(|v| v * v).sum();
        let potential = g2 - self.laplacian_f1(config) + energy;
        Ok(OperatorLCoefficients {
            drift: g.into_iter().map(|v| 2.0 * v).collect(),
            potential,
        })
    }

    pub fn bounds(&self) -> FactorBounds {
        let n = self.system.electron_count() as f64;
        let z = self.system.total_charge();
        let difference = self.terms.iter().map(|t| t.weight().abs()).sum();
        // |u/|u| - u/√(|u|²+1)| ≤ 1; each electron sees every nucleus and N-1 partners.
        let gradient = 0.5 * z + PAIR_WEIGHT * (n - 1.0);
        // 2/s + 1/s³ ≤ 3.
        let laplacian_f1 = self
            .terms
            .iter()
            .map(|t| 3.0 * t.laplacian_multiplicity() * t.weight().abs())
            .sum();
        FactorBounds {
            difference,
            gradient,
            laplacian_f1,
        }
    }

    /// Bounds `(‖b‖∞, |W|)` on the coefficients of `L` for eigenvalue `energy`.
    pub fn coefficient_bounds(&self, energy: f64) -> (f64, f64) {
        let b = self.bounds();
        let dim = 3.0 * self.system.electron_count() as f64;
        (2.0 * b.gradient, dim * b.gradient * b.gradient + b.laplacian_f1 + energy.abs())
    }

    fn ensure_fd_distance(&self, config: &Configuration, h: f64) -> Result<()> {
        self.system.check(config)?;
        let distance = self.system.coalescence_distance(config);
        if distance <= 10.0 * h {
            return Err(Error::TooCloseToSingularity {
                distance,
                limit: 10.0 * h,
            });
        }
        Ok(())
    }

    /// `(Lψ₁)(x)` with finite-difference derivatives of `ψ₁`.
    pub fn l_residual<M>(&self, model: &M, energy: f64, config: &Configuration, h: f64) -> Result<f64>
    where
        M: WavefunctionModel + ?Sized,
    {
        self.ensure_fd_distance(config, h)?;
        let psi1 = |c: &[f64]| self.psi1(model, &Configuration::from_flat(c));
        let coeffs = self.l_coefficients(config, energy)?;
        let lap = fd::laplacian(psi1, config.flat(), h);
        let grad = fd::gradient(psi1, config.flat(), h);
        let drift: f64 = coeffs.drift.iter().zip(&grad).map(|(b, g)| b * g).sum();
        Ok(lap + drift + coeffs.potential * psi1(config.flat()))
    }

    /// `F̃ = F∘T*` at frame coordinates `(x_P, x')`.
    pub fn eval_f_transformed(&self, frame: &ClusterFrame, x_p: Vec3, x_prime: &[f64]) -> f64 {
        self.eval_f(&frame.inverse(x_p, x_prime))
    }

    /// `F̃₁ = F₁∘T*` at frame coordinates `(x_P, x')`.
    pub fn eval_f1_transformed(&self, frame: &ClusterFrame, x_p: Vec3, x_prime: &[f64]) -> f64 {
        self.eval_f1(&frame.inverse(x_p, x_prime))
    }

    /// `(L̃ψ̃₁)` in frame coordinates, with `ψ̃₁ = ψ₁∘T*` differentiated by finite
    /// differences in `(x_P, x')`. The drift transforms as `b̃ = T b`; `W` is a
    /// pointwise scalar.
    pub fn l_residual_transformed<M>(
        &self,
        frame: &ClusterFrame,
        model: &M,
        energy: f64,
        x_p: Vec3,
        x_prime: &[f64],
        h: f64,
    ) -> Result<f64>
    where
        M: WavefunctionModel + ?Sized,
    {
        let config = frame.inverse(x_p, x_prime);
        self.ensure_fd_distance(&config, h)?;
        let coeffs = self.l_coefficients(&config, energy)?;
        let (b_p, b_rest) = frame.forward(&Configuration::from_flat(&coeffs.drift));
        let y: Vec<f64> = x_p.iter().chain(x_prime).copied().collect();
        let psi1_t = |c: &[f64]| {
            let config = frame.inverse([c[0], c[1], c[2]], &c[3..]);
            self.psi1(model, &config)
        };
        let lap = fd::laplacian(psi1_t, &y, h);
        let grad = fd::gradient(psi1_t, &y, h);
        let drift: f64 = b_p
            .iter()
            .chain(&b_rest)
            .zip(&grad)
            .map(|(b, g)| b * g)
            .sum();
        Ok(lap + drift + coeffs.potential * psi1_t(&y))
    }
}
