//! Analytic wavefunction models.
//!
//! Exact eigenfunctions are available in closed form only for one electron,
//! so the models here reproduce the structural features of a many-electron
//! eigenfunction (Coulomb cusps, exponential decay) without being
//! eigenfunctions for `N ≥ 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec3};
use crate::system::Configuration;

/// Constants `(c, λ)` with `|ψ(x)| ≤ c·exp(-λ‖x‖)` on all of ℝ^{3N}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub c: f64,
    pub lambda: f64,
}

impl DecayCertificate {
    pub fn new(c: f64, lambda: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) || !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "decay certificate needs c > 0 and λ > 0, got c = {c}, λ = {lambda}"
            )));
        }
        Ok(Self { c, lambda })
    }

    pub fn bound(&self, norm: f64) -> f64 {
        self.c * (-self.lambda * norm).exp()
    }
}

/// A real-valued wavefunction on ℝ^{3N}.
///
/// Gradients are flat vectors of length `3N`; Hessians are row-major
/// `3N × 3N`.
pub trait WavefunctionModel: Send + Sync {
    fn electron_count(&self) -> usize;

    fn eval(&self, config: &Configuration) -> f64;

    fn gradient(&self, _config: &Configuration) -> Option<Vec<f64>> {
        None
    }

    fn hessian(&self, _config: &Configuration) -> Option<Vec<f64>> {
        None
    }

    fn certificate(&self) -> DecayCertificate;

    /// Eigenvalue of `-Δ + V` when the model is an exact eigenfunction.
    fn eigenvalue(&self) -> Option<f64> {
        None
    }
}

/// Value and derivatives of `ψ` along a weighted simultaneous translation of
/// the electrons: `D_a = Σ_j w_j ∂/∂x_{j,a}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationDerivatives {
    pub value: f64,
    pub first: Vec3,
    pub second: [[f64; 3]; 3],
}

/// Computes [`TranslationDerivatives`] from the model's analytic gradient and
/// Hessian.
pub fn translation_derivatives<M>(
    model: &M,
    config: &Configuration,
    weights: &[f64],
) -> Result<TranslationDerivatives>
where
    M: WavefunctionModel + ?Sized,
{
    let n = config.electron_count();
    assert_eq!(weights.len(), n, "one translation weight per electron");
    let grad = model.gradient(config).ok_or(Error::MissingDerivatives)?;
    let hess = model.hessian(config).ok_or(Error::MissingDerivatives)?;
    let dim = 3 * n;
    let mut first = [0.0; 3];
    let mut second = [[0.0; 3]; 3];
    for (j, &wj) in weights.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        for a in 0..3 {
            first[a] += wj * grad[3 * j + a];
        }
        for (k, &wk) in weights.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            for a in 0..3 {
                for b in 0..3 {
                    second[a][b] += wj * wk * hess[(3 * j + a) * dim + 3 * k + b];
                }
            }
        }
    }
    Ok(TranslationDerivatives {
        value: model.eval(config),
        first,
        second,
    })
}

/// `ψ = exp(one_body·Σ_j |x_j| + pair·Σ_{i<j} |x_i - x_j|)`, the shared shape of
/// both model families. Returns `(ln ψ, ∇ ln ψ, ∇² ln ψ)` when requested.
#[derive(Debug, Clone, Copy)]
struct DistanceExponent {
    one_body: f64,
    pair: f64,
}

/// Gradient and Hessian of `|u|` in ℝ³; zero at `u = 0`, where the kink sits.
fn abs_derivatives(u: Vec3) -> (f64, Vec3, [[f64; 3]; 3]) {
    let r = geom::norm(u);
    if r == 0.0 {
        return (0.0, [0.0; 3], [[0.0; 3]; 3]);
    }
    let hat = geom::scale(u, 1.0 / r);
    let mut h = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let delta = if a == b { 1.0 } else { 0.0 };
            h[a][b] = (delta - hat[a] * hat[b]) / r;
        }
    }
    (r, hat, h)
}

impl DistanceExponent {
    fn log_value(&self, x: &[Vec3]) -> f64 {
        let mut s = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            s += self.one_body * geom::norm(xj);
            if self.pair != 0.0 {
                for &xk in &x[j + 1..] {
                    s += self.pair * geom::dist(xj, xk);
                }
            }
        }
        s
    }

    fn log_gradient(&self, x: &[Vec3]) -> Vec<f64> {
        let n = x.len();
        let mut g = vec![0.0; 3 * n];
        for j in 0..n {
            let (_, hat, _) = abs_derivatives(x[j]);
            for a in 0..3 {
                g[3 * j + a] += self.one_body * hat[a];
            }
            if self.pair != 0.0 {
                for k in j + 1..n {
                    let (_, hat, _) = abs_derivatives(geom::sub(x[j], x[k]));
                    for a in 0..3 {
                        g[3 * j + a] += self.pair * hat[a];
                        g[3 * k + a] -= self.pair * hat[a];
                    }
                }
            }
        }
        g
    }

    fn log_hessian(&self, x: &[Vec3]) -> Vec<f64> {
        let n = x.len();
        let dim = 3 * n;
        let mut h = vec![0.0; dim * dim];
        let add_block = |h: &mut [f64], bj: usize, bk: usize, block: &[[f64; 3]; 3], s: f64| {
            for a in 0..3 {
                for b in 0..3 {
                    h[(3 * bj + a) * dim + 3 * bk + b] += s * block[a][b];
                }
            }
        };
        for j in 0..n {
            let (_, _, hj) = abs_derivatives(x[j]);
            add_block(&mut h, j, j, &hj, self.one_body);
            if self.pair != 0.0 {
                for k in j + 1..n {
                    let (_, _, hp) = abs_derivatives(geom::sub(x[j], x[k]));
                    add_block(&mut h, j, j, &hp, self.pair);
                    add_block(&mut h, k, k, &hp, self.pair);
                    add_block(&mut h, j, k, &hp, -self.pair);
                    add_block(&mut h, k, j, &hp, -self.pair);
                }
            }
        }
        h
    }

    fn eval(&self, x: &[Vec3]) -> f64 {
        self.log_value(x).exp()
    }

    fn gradient(&self, x: &[Vec3]) -> Vec<f64> {
        let psi = self.eval(x);
        self.log_gradient(x).into_iter().map(|g| psi * g).collect()
    }

    /// `∇²ψ = ψ (∇² ln ψ + ∇ln ψ ∇ln ψᵀ)`.
    fn hessian(&self, x: &[Vec3]) -> Vec<f64> {
        let psi = self.eval(x);
        let g = self.log_gradient(x);
        let mut h = self.log_hessian(x);
        let dim = g.len();
        for r in 0..dim {
            for c in 0..dim {
                h[r * dim + c] = psi * (h[r * dim + c] + g[r] * g[c]);
            }
        }
        h
    }
}

/// `ψ(x) = Π_j exp(-a|x_j|)`, a product of hydrogenic orbitals centred at the
/// origin. With `a = Z/2` and `N = 1` this is the exact ground state with
/// eigenvalue `-Z²/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HydrogenicProduct {
    pub charge: f64,
    pub exponent: f64,
    pub electrons: usize,
    certificate: DecayCertificate,
}

impl HydrogenicProduct {
    /// Certificate `(1, a)`: `Σ_j |x_j| ≥ ‖x‖`.
    pub fn new(charge: f64, exponent: f64, electrons: usize) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::InvalidModel(format!("orbital exponent must be positive, got {exponent}")));
        }
        let certificate = DecayCertificate::new(1.0, exponent)?;
        Self::with_certificate(charge, exponent, electrons, certificate)
    }

    /// Same model with a caller-chosen certificate, which is not checked.
    pub fn with_certificate(
        charge: f64,
        exponent: f64,
        electrons: usize,
        certificate: DecayCertificate,
    ) -> Result<Self> {
        if electrons == 0 {
            return Err(Error::InvalidModel("at least one electron is required".into()));
        }
        if !(charge > 0.0) || !(exponent > 0.0) {
            return Err(Error::InvalidModel("charge and exponent must be positive".into()));
        }
        Ok(Self {
            charge,
            exponent,
            electrons,
            certificate,
        })
    }

    fn shape(&self) -> DistanceExponent {
        DistanceExponent {
            one_body: -self.exponent,
            pair: 0.0,
        }
    }

    /// Single-orbital value `exp(-a|x|)`.
    pub fn orbital(&self, x: Vec3) -> f64 {
        (-self.exponent * geom::norm(x)).exp()
    }
}

impl WavefunctionModel for HydrogenicProduct {
    fn electron_count(&self) -> usize {
        self.electrons
    }

    fn eval(&self, config: &Configuration) -> f64 {
        self.shape().eval(config.positions())
    }

    fn gradient(&self, config: &Configuration) -> Option<Vec<f64>> {
        Some(self.shape().gradient(config.positions()))
    }

    fn hessian(&self, config: &Configuration) -> Option<Vec<f64>> {
        Some(self.shape().hessian(config.positions()))
    }

    fn certificate(&self) -> DecayCertificate {
        self.certificate
    }

    fn eigenvalue(&self) -> Option<f64> {
        let exact = self.electrons == 1 && (self.exponent - 0.5 * self.charge).abs() <= 1e-15 * self.charge;
        exact.then(|| -0.25 * self.charge * self.charge)
    }
}

/// `ψ(x) = exp(-a Σ_j |x_j| + b Σ_{i<j} |x_i - x_j|)` with `0 < b` and
/// `b(N-1) < a`. The pair factor carries electron–electron cusps; it is not
/// an eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelatedToy {
    pub exponent: f64,
    pub pair_exponent: f64,
    pub electrons: usize,
    certificate: DecayCertificate,
}

impl CorrelatedToy {
    /// Certificate `(1, a - b(N-1))`, from `Σ_{i<j}|x_i - x_j| ≤ (N-1)Σ_j|x_j|`.
    pub fn new(exponent: f64, pair_exponent: f64, electrons: usize) -> Result<Self> {
        if electrons == 0 {
            return Err(Error::InvalidModel("at least one electron is required".into()));
        }
        if !(pair_exponent > 0.0 && pair_exponent < exponent) {
            return Err(Error::InvalidModel(format!(
                "pair exponent must satisfy 0 < b < a, got a = {exponent}, b = {pair_exponent}"
            )));
        }
        let lambda = exponent - pair_exponent * (electrons as f64 - 1.0);
        if !(lambda > 0.0) {
            return Err(Error::InvalidModel(format!(
                "decay rate a - b(N-1) = {lambda} must be positive"
            )));
        }
        Ok(Self {
            exponent,
            pair_exponent,
            electrons,
            certificate: DecayCertificate::new(1.0, lambda)?,
        })
    }

    /// Same model with a caller-chosen certificate, which is not checked.
    pub fn with_certificate(
        exponent: f64,
        pair_exponent: f64,
        electrons: usize,
        certificate: DecayCertificate,
    ) -> Result<Self> {
        Ok(Self {
            certificate,
            ..Self::new(exponent, pair_exponent, electrons)?
        })
    }

    fn shape(&self) -> DistanceExponent {
        DistanceExponent {
            one_body: -self.exponent,
            pair: self.pair_exponent,
        }
    }
}

impl WavefunctionModel for CorrelatedToy {
    fn electron_count(&self) -> usize {
        self.electrons
    }

    fn eval(&self, config: &Configuration) -> f64 {
        self.shape().eval(config.positions())
    }

    fn gradient(&self, config: &Configuration) -> Option<Vec<f64>> {
        Some(self.shape().gradient(config.positions()))
    }

    fn hessian(&self, config: &Configuration) -> Option<Vec<f64>> {
        Some(self.shape().hessian(config.positions()))
    }

    fn certificate(&self) -> DecayCertificate {
        self.certificate
    }
}

/// Either model family, for configuration-driven callers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AnyModel {
    Hydrogenic(HydrogenicProduct),
    Correlated(CorrelatedToy),
}

impl WavefunctionModel for AnyModel {
    fn electron_count(&self) -> usize {
        match self {
            AnyModel::Hydrogenic(m) => m.electron_count(),
            AnyModel::Correlated(m) => m.electron_count(),
        }
    }

    fn eval(&self, config: &Configuration) -> f64 {
        match self {
            AnyModel::Hydrogenic(m) => m.eval(config),
            AnyModel::Correlated(m) => m.eval(config),
        }
    }

    fn gradient(&self, config: &Configuration) -> Option<Vec<f64>> {
        match self {
            AnyModel::Hydrogenic(m) => m.gradient(config),
            AnyModel::Correlated(m) => m.gradient(config),
        }
    }

    fn hessian(&self, config: &Configuration) -> Option<Vec<f64>> {
        match self {
            AnyModel::Hydrogenic(m) => m.hessian(config),
            AnyModel::Correlated(m) => m.hessian(config),
        }
    }

    fn certificate(&self) -> DecayCertificate {
        match self {
            AnyModel::Hydrogenic(m) => m.certificate(),
            AnyModel::Correlated(m) => m.certificate(),
        }
    }

    fn eigenvalue(&self) -> Option<f64> {
        match self {
            AnyModel::Hydrogenic(m) => m.eigenvalue(),
            AnyModel::Correlated(m) => m.eigenvalue(),
        }
    }
}

impl From<HydrogenicProduct> for AnyModel {
    fn from(m: HydrogenicProduct) -> Self {
        AnyModel::Hydrogenic(m)
    }
}

impl From<CorrelatedToy> for AnyModel {
    fn from(m: CorrelatedToy) -> Self {
        AnyModel::Correlated(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub samples: usize,
    /// Largest observed `|ψ(x)| / (c·exp(-λ‖x‖))`.
    pub max_ratio: f64,
    pub worst_norm: f64,
}

/// Samples configurations with `‖x‖` in `radius_range` and checks the decay
/// certificate at each of them.
///
/// Besides uniformly random directions in ℝ^{3N}, the probe set includes
/// points where a single coordinate carries the whole norm, which is the
/// worst case for product-type models.
pub fn decay_check<M>(
    model: &M,
    sample_count: usize,
    radius_range: (f64, f64),
    seed: u64,
) -> Result<DecayReport>
where
    M: WavefunctionModel + ?Sized,
{
    let (r_lo, r_hi) = radius_range;
    if !(r_lo >= 0.0 && r_hi >= r_lo) {
        return Err(Error::Precondition(format!("invalid radius range [{r_lo}, {r_hi}]")));
    }
    let n = model.electron_count();
    let dim = 3 * n;
    let cert = model.certificate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    let mut tested = 0usize;

    let mut test = |coords: Vec<f64>| -> Result<()> {
        let config = Configuration::from_flat(&coords);
        let norm = config.norm();
        let value = model.eval(&config).abs();
        let bound = cert.bound(norm);
        let ratio = value / bound;
        tested += 1;
        if ratio > worst.0 {
            worst = (ratio, norm);
        }
        if value > bound * (1.0 + 1e-12) {
            return Err(Error::CertificateViolated { config, value, bound });
        }
        Ok(())
    };

    for &r in &[r_lo, r_hi] {
        for axis in 0..dim {
            let mut coords = vec![0.0; dim];
            coords[axis] = r;
            test(coords)?;
        }
    }
    for _ in 0..sample_count {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = rng.random_range(r_lo..=r_hi);
        dir.iter_mut().for_each(|v| *v *= r / len);
        test(dir)?;
    }
    Ok(DecayReport {
        samples: tested,
        max_ratio: worst.0,
        worst_norm: worst.1,
    })
}
