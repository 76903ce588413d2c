//! Nuclei, electron configurations and the Coulomb potential.
//!
//! The kinetic term is `-Δ` (no factor `1/2`), and the internuclear
//! repulsion is never included in `V`: it is an additive constant for fixed
//! nuclei.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::geom::{self, Vec3};
use crate::wavefunction::WavefunctionModel;

/// Distances below this value count as a coalescence.
pub const COALESCENCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nucleus {
    pub position: Vec3,
    pub charge: f64,
}

/// Fixed nuclei together with the number of electrons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MolecularSystem {
    nuclei: Vec<Nucleus>,
    electrons: usize,
}

/// A point `(x₁, …, x_N)` of ℝ^{3N}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    positions: Vec<Vec3>,
}

impl Configuration {
    pub fn new(positions: Vec<Vec3>) -> Self {
        Self { positions }
    }

    pub fn zeros(electrons: usize) -> Self {
        Self::new(vec![[0.0; 3]; electrons])
    }

    /// Builds a configuration from `3N` flat coordinates.
    pub fn from_flat(coords: &[f64]) -> Self {
        assert!(coords.len().is_multiple_of(3), "flat coordinate length must be a multiple of 3");
        Self::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn electron_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [Vec3] {
        &mut self.positions
    }

    pub fn position(&self, j: usize) -> Vec3 {
        self.positions[j]
    }

    pub fn flat(&self) -> &[f64] {
        self.positions.as_flattened()
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        self.positions.as_flattened_mut()
    }

    /// Euclidean norm in ℝ^{3N}.
    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Applies the same map to every electron position.
    pub fn map_positions(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self::new(self.positions.iter().map(|&p| f(p)).collect())
    }
}

impl MolecularSystem {
    pub fn new(nuclei: Vec<Nucleus>, electrons: usize) -> Result<Self> {
        if electrons == 0 {
            return Err(Error::InvalidSystem("at least one electron is required".into()));
        }
        if nuclei.is_empty() {
            return Err(Error::InvalidSystem("at least one nucleus is required".into()));
        }
        for (l, n) in nuclei.iter().enumerate() {
            if !(n.charge > 0.0 && n.charge.is_finite()) {
                return Err(Error::InvalidSystem(format!(
                    "nucleus {} has non-positive charge {}",
                    l + 1,
                    n.charge
                )));
            }
            if n.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSystem(format!("nucleus {} has a non-finite position", l + 1)));
            }
        }
        for l in 0..nuclei.len() {
            for k in l + 1..nuclei.len() {
                if geom::dist(nuclei[l].position, nuclei[k].position) <= COALESCENCE_TOLERANCE {
                    return Err(Error::InvalidSystem(format!(
                        "nuclei {} and {} coincide",
                        l + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(Self { nuclei, electrons })
    }

    /// Single nucleus of charge `charge` at the origin.
    pub fn atom(charge: f64, electrons: usize) -> Result<Self> {
        Self::new(
            vec![Nucleus {
                position: [0.0; 3],
                charge,
            }],
            electrons,
        )
    }

    pub fn nuclei(&self) -> &[Nucleus] {
        &self.nuclei
    }

    pub fn electron_count(&self) -> usize {
        self.electrons
    }

    pub fn total_charge(&self) -> f64 {
        self.nuclei.iter().map(|n| n.charge).sum()
    }

    /// `max_l |R_l|`.
    pub fn max_nucleus_norm(&self) -> f64 {
        self.nuclei
            .iter()
            .map(|n| geom::norm(n.position))
            .fold(0.0, f64::max)
    }

    /// `min_l |x - R_l|`.
    pub fn nearest_nucleus_distance(&self, x: Vec3) -> f64 {
        self.nuclei
            .iter()
            .map(|n| geom::dist(x, n.position))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check(&self, config: &Configuration) -> Result<()> {
        if config.electron_count() != self.electrons {
            return Err(Error::ElectronCountMismatch {
                expected: self.electrons,
                got: config.electron_count(),
            });
        }
        Ok(())
    }

    /// Smallest electron–nucleus or electron–electron distance.
    pub fn coalescence_distance(&self, config: &Configuration) -> f64 {
        let x = config.positions();
        let mut best = f64::INFINITY;
        for (j, &xj) in x.iter().enumerate() {
            best = best.min(self.nearest_nucleus_distance(xj));
            for &xk in &x[j + 1..] {
                best = best.min(geom::dist(xj, xk));
            }
        }
        best
    }

    pub(crate) fn ensure_separated(&self, config: &Configuration, tolerance: f64) -> Result<()> {
        self.check(config)?;
        let distance = self.coalescence_distance(config);
        if distance <= tolerance {
            return Err(Error::CoalescentConfiguration { distance, tolerance });
        }
        Ok(())
    }

    /// `V = -Σ_j Σ_l Z_l/|x_j - R_l| + Σ_{i<j} 1/|x_i - x_j|`.
    pub fn potential(&self, config: &Configuration) -> Result<f64> {
        self.potential_with_tolerance(config, COALESCENCE_TOLERANCE)
    }

    pub fn potential_with_tolerance(&self, config: &Configuration, tolerance: f64) -> Result<f64> {
        self.ensure_separated(config, tolerance)?;
        let x = config.positions();
        let mut v = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            for n in &self.nuclei {
                v -= n.charge / geom::dist(xj, n.position);
            }
            for &xk in &x[j + 1..] {
                v += 1.0 / geom::dist(xj, xk);
            }
        }
        Ok(v)
    }

    /// `(-Δψ + Vψ - Eψ)(x)` with a finite-difference Laplacian of step `h`.
    pub fn schrodinger_residual<M>(
        &self,
        model: &M,
        energy: f64,
        config: &Configuration,
        h: f64,
    ) -> Result<f64>
    where
        M: WavefunctionModel + ?Sized,
    {
        self.check(config)?;
        let distance = self.coalescence_distance(config);
        if distance <= 10.0 * h {
            return Err(Error::TooCloseToSingularity {
                distance,
                limit: 10.0 * h,
            });
        }
        let psi = model.eval(config);
        let lap = fd::laplacian(|c| model.eval(&Configuration::from_flat(c)), config.flat(), h);
        let v = self.potential(config)?;
        Ok(-lap + v * psi - energy * psi)
    }
}
