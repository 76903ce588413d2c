//! Orthogonal frames `T` with `T(x₁, …, x_N) = (x_P, x')`, where
//! `x_P = |P|^{-1/2} Σ_{j∈P} x_j` is the scaled centre of mass of a cluster.
//!
//! The frames never mix spatial axes, so `T = C ⊗ I₃` for an orthogonal
//! `N × N` matrix `C`; only `C` is stored. Row 0 of `C` is `|P|^{-1/2}` on the
//! cluster and 0 elsewhere. The remaining rows are a deterministic completion:
//! electrons are relabelled with `P` first (ascending) and `Q` after, and the
//! standard basis vectors are orthogonalized against row 0 by modified
//! Gram–Schmidt in that order, skipping dependent ones. Any other orthogonal
//! completion is equally valid; tests touching individual entries of rows
//! `1..N` depend on this convention.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::system::Configuration;

const DEPENDENCE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFrame {
    members: Vec<bool>,
    order: Vec<usize>,
    /// `N × N`, columns indexed by original electron labels.
    coefficients: DMatrix<f64>,
}

impl ClusterFrame {
    /// Builds the frame for cluster `p` (0-based electron labels) among `n`
    /// electrons.
    pub fn build(n: usize, p: &[usize]) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::EmptyCluster);
        }
        let mut members = vec![false; n];
        for &j in p {
            if j >= n {
                return Err(Error::InvalidCluster(format!("electron {} out of range for N = {n}", j + 1)));
            }
            if members[j] {
                return Err(Error::InvalidCluster(format!("electron {} listed twice", j + 1)));
            }
            members[j] = true;
        }
        let order: Vec<usize> = (0..n)
            .filter(|&j| members[j])
            .chain((0..n).filter(|&j| !members[j]))
            .collect();
        let n1 = p.len();

        // Work in the relabelled basis, then scatter columns back.
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        let inv = 1.0 / (n1 as f64).sqrt();
        rows.push((0..n).map(|i| if i < n1 { inv } else { 0.0 }).collect());
        for i in 0..n {
            if rows.len() == n {
                break;
            }
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            // Two passes keep the result orthogonal to rounding level.
            for _ in 0..2 {
                for r in &rows {
                    let proj: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(r).for_each(|(vi, ri)| *vi -= proj * ri);
                }
            }
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len < DEPENDENCE_THRESHOLD {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= len);
            if let Some(lead) = v.iter().find(|x| x.abs() > DEPENDENCE_THRESHOLD) {
                if *lead < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
            }
            rows.push(v);
        }
        debug_assert_eq!(rows.len(), n);

        let mut coefficients = DMatrix::zeros(n, n);
        for (r, row) in rows.iter().enumerate() {
            for (slot, &label) in order.iter().enumerate() {
                coefficients[(r, label)] = row[slot];
            }
        }
        Ok(Self {
            members,
            order,
            coefficients,
        })
    }

    pub fn electron_count(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_size(&self) -> usize {
        self.members.iter().filter(|&&m| m).count()
    }

    pub fn in_cluster(&self, j: usize) -> bool {
        self.members[j]
    }

    pub fn cluster(&self) -> Vec<usize> {
        self.order[..self.cluster_size()].to_vec()
    }

    /// Electron labels in frame order: the cluster first, then the rest.
    pub fn relabelling(&self) -> &[usize] {
        &self.order
    }

    /// The `N × N` block coefficients `C` with `T = C ⊗ I₃`.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    /// The full `3N × 3N` matrix `T`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.electron_count();
        DMatrix::from_fn(3 * n, 3 * n, |r, c| {
            if r % 3 == c % 3 {
                self.coefficients[(r / 3, c / 3)]
            } else {
                0.0
            }
        })
    }

    /// Coefficients of `∂/∂x_P` in terms of `∂/∂x_j`: `(T*)_{j, x_P} = C[0, j]`.
    pub fn centre_weights(&self) -> Vec<f64> {
        self.coefficients.row(0).iter().copied().collect()
    }

    /// `t_j* x'`, the `x'`-dependent part of electron `j`'s position.
    pub fn offset(&self, j: usize, x_prime: &[f64]) -> Vec3 {
        let mut out = [0.0; 3];
        for r in 1..self.electron_count() {
            let c = self.coefficients[(r, j)];
            for a in 0..3 {
                out[a] += c * x_prime[3 * (r - 1) + a];
            }
        }
        out
    }

    /// `(x_P, x') = T x`.
    pub fn forward(&self, config: &Configuration) -> (Vec3, Vec<f64>) {
        let n = self.electron_count();
        assert_eq!(config.electron_count(), n);
        let x = config.positions();
        let mut y = vec![[0.0; 3]; n];
        for (r, yr) in y.iter_mut().enumerate() {
            for (j, xj) in x.iter().enumerate() {
                let c = self.coefficients[(r, j)];
                if c != 0.0 {
                    for a in 0..3 {
                        yr[a] += c * xj[a];
                    }
                }
            }
        }
        let x_p = y[0];
        (x_p, y[1..].as_flattened().to_vec())
    }

    /// `x = T*(x_P, x')`.
    pub fn inverse(&self, x_p: Vec3, x_prime: &[f64]) -> Configuration {
        let mut out = Configuration::zeros(self.electron_count());
        self.inverse_into(x_p, x_prime, &mut out);
        out
    }

    /// [`inverse`](Self::inverse) writing into an existing configuration.
    pub fn inverse_into(&self, x_p: Vec3, x_prime: &[f64], out: &mut Configuration) {
        let n = self.electron_count();
        assert_eq!(x_prime.len(), 3 * (n - 1), "x' must have 3N - 3 coordinates");
        assert_eq!(out.electron_count(), n);
        for (j, xj) in out.positions_mut().iter_mut().enumerate() {
            let c0 = self.coefficients[(0, j)];
            let mut v = [c0 * x_p[0], c0 * x_p[1], c0 * x_p[2]];
            for r in 1..n {
                let c = self.coefficients[(r, j)];
                if c != 0.0 {
                    for a in 0..3 {
                        v[a] += c * x_prime[3 * (r - 1) + a];
                    }
                }
            }
            *xj = v;
        }
    }

    /// `‖T Tᵀ - I‖_max`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.electron_count();
        let c = &self.coefficients;
        let prod = c * c.transpose();
        (prod - DMatrix::<f64>::identity(n, n)).abs().max()
    }
}
