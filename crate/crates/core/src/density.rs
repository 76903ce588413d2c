//! Monte-Carlo estimators for the one- and two-electron densities, the
//! one-electron density matrix and the cluster-decomposed density, together
//! with derivative probes and decay fits.
//!
//! Densities are unnormalized functionals of `ψ` as given. With the default
//! [`SumMode::FirstTerm`] only the electron-1 term of each defining sum is
//! computed, e.g. `ρ(x) = ∫ ψ²(x, x₂, …, x_N) dx₂⋯dx_N`. [`SumMode::FullSum`]
//! splices the fixed arguments into every slot and sums all terms.
//!
//! Importance sampling:
//!
//! * integrals over the remaining electrons draw each free electron from
//!   `q(y) = k³/(8π)·exp(-k|y|)`, `k = 2μ`, with `μ` the model's certificate
//!   rate unless overridden;
//! * cluster integrals over `x' ∈ ℝ^d`, `d = 3N - 3`, draw from the isotropic
//!   density `∝ exp(-k‖x'‖)`.
//!
//! Every proposal is independent of the evaluation point, so estimates at
//! different points with the same seed share their draws.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterSelection, CutoffFamily, Jet};
use crate::error::{Error, Result};
use crate::fd;
use crate::geom::{self, Vec3};
use crate::mc::{self, RunningStats};
use crate::system::{Configuration, MolecularSystem};
use crate::transform::ClusterFrame;
use crate::wavefunction::{self, DecayCertificate, WavefunctionModel};

/// Which terms of the defining sums are evaluated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumMode {
    /// Only the term with the fixed arguments in the leading slots.
    #[default]
    FirstTerm,
    /// All terms, by splicing the fixed arguments into every slot.
    FullSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCSettings {
    pub samples: u64,
    pub seed: u64,
    /// Length-scale multiplier of the proposal: the sampling rate is
    /// `μ / proposal_scale`.
    pub proposal_scale: f64,
    /// Importance exponent `μ`; `None` uses the certificate rate `λ`.
    pub exponent: Option<f64>,
    pub mode: SumMode,
}

impl MCSettings {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self {
            samples,
            seed,
            proposal_scale: 1.0,
            exponent: None,
            mode: SumMode::FirstTerm,
        }
    }

    pub fn with_mode(self, mode: SumMode) -> Self {
        Self { mode, ..self }
    }

    pub fn with_exponent(self, exponent: f64) -> Self {
        Self {
            exponent: Some(exponent),
            ..self
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Precondition("at least one Monte-Carlo sample is required".into()));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::Precondition(format!(
                "proposal scale must be positive, got {}",
                self.proposal_scale
            )));
        }
        if let Some(mu) = self.exponent {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Precondition(format!("importance exponent must be positive, got {mu}")));
            }
        }
        Ok(())
    }

    /// `μ_eff = μ / proposal_scale`.
    pub fn effective_exponent(&self, certificate: &DecayCertificate) -> f64 {
        self.exponent.unwrap_or(certificate.lambda) / self.proposal_scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Number of Monte-Carlo samples; 0 when the value is exact.
    pub samples: u64,
    pub seed: u64,
}

impl DensityEstimate {
    fn exact(value: f64, seed: u64) -> Self {
        Self {
            value,
            std_error: 0.0,
            samples: 0,
            seed,
        }
    }

    fn from_stats(stats: &RunningStats, seed: u64) -> Self {
        Self {
            value: stats.mean,
            std_error: stats.std_error(),
            samples: stats.count,
            seed,
        }
    }
}

/// `γ = (γ₁, γ₂, γ₃)`, derivative counts along the coordinate axes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub [usize; 3]);

impl MultiIndex {
    pub const ZERO: MultiIndex = MultiIndex([0; 3]);

    /// `order · e_axis`.
    pub fn axis(axis: usize, order: usize) -> Self {
        let mut g = [0; 3];
        g[axis] = order;
        MultiIndex(g)
    }

    /// `|γ|`.
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// Axis list, e.g. `(1, 0, 2) → [0, 2, 2]`.
    pub fn axes(&self) -> Vec<usize> {
        (0..3).flat_map(|a| std::iter::repeat_n(a, self.0[a])).collect()
    }

    fn component(&self, jet: &Jet) -> f64 {
        match self.axes()[..] {
            [] => jet.value,
            [a] => jet.first[a],
            [a, b] => jet.second[a][b],
            _ => unreachable!("orders above two are rejected earlier"),
        }
    }

    /// Tensor product of second-order central stencils: `(offset, weight)` with
    /// `∂^γ f(x) ≈ Σ weight · f(x + offset)`.
    pub fn stencil(&self, h: f64) -> Vec<(Vec3, f64)> {
        let mut points = vec![([0.0; 3], 1.0)];
        for a in 0..3 {
            if self.0[a] == 0 {
                continue;
            }
            let (offsets, weights) = fd::central_stencil(self.0[a]);
            let scale = h.powi(self.0[a] as i32);
            points = points
                .into_iter()
                .flat_map(|(p, w)| {
                    offsets.iter().zip(weights).map(move |(&o, &wo)| {
                        let mut q = p;
                        q[a] += o * h;
                        (q, w * wo / scale)
                    })
                })
                .collect();
        }
        points
    }
}

/// `N₁^{3/2} (√N₁)^{|γ|}`: the delta-function Jacobian of the cluster change of
/// variables times the chain-rule factor of `x_P = √N₁ (x - t₁* x')`.
pub fn chain_rule_prefactor(cluster_size: usize, order: usize) -> f64 {
    let n1 = cluster_size as f64;
    n1.powf(1.5) * n1.sqrt().powi(order as i32)
}

fn check_model<M>(model: &M, system: &MolecularSystem) -> Result<usize>
where
    M: WavefunctionModel + ?Sized,
{
    let n = system.electron_count();
    if model.electron_count() != n {
        return Err(Error::ElectronCountMismatch {
            expected: n,
            got: model.electron_count(),
        });
    }
    Ok(n)
}

/// `ln Γ(m/2)` for a positive integer `m`.
fn ln_gamma_half(m: usize) -> f64 {
    let mut x = if m.is_multiple_of(2) { 1.0 } else { 0.5 };
    let mut acc = if m.is_multiple_of(2) { 0.0 } else { 0.5 * std::f64::consts::PI.ln() };
    while 2.0 * x < m as f64 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// One free electron drawn from `k³/(8π)·exp(-k|y|)`.
struct RadialExponential {
    rate: f64,
    radius: Gamma<f64>,
    ln_norm: f64,
}

impl RadialExponential {
    fn new(rate: f64) -> Self {
        Self {
            rate,
            radius: Gamma::new(3.0, 1.0 / rate).expect("positive rate"),
            ln_norm: 3.0 * rate.ln() - (8.0 * std::f64::consts::PI).ln(),
        }
    }

    /// Returns the point and `ln q`.
    fn draw(&self, rng: &mut ChaCha8Rng) -> (Vec3, f64) {
        let r = self.radius.sample(rng);
        let dir: [f64; 3] = UnitSphere.sample(rng);
        (geom::scale(dir, r), self.ln_norm - self.rate * r)
    }
}

/// `x' ∈ ℝ^d` drawn from `k^d exp(-k‖x'‖) / (|S^{d-1}| Γ(d))`.
struct IsotropicExponential {
    dim: usize,
    rate: f64,
    radius: Gamma<f64>,
    ln_norm: f64,
}

impl IsotropicExponential {
    fn new(dim: usize, rate: f64) -> Self {
        let d = dim as f64;
        let ln_sphere = std::f64::consts::LN_2 + 0.5 * d * std::f64::consts::PI.ln() - ln_gamma_half(dim);
        let ln_gamma_d = ln_gamma_half(2 * dim);
        Self {
            dim,
            rate,
            radius: Gamma::new(d, 1.0 / rate).expect("positive rate"),
            ln_norm: d * rate.ln() - ln_sphere - ln_gamma_d,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) -> f64 {
        let r = self.radius.sample(rng);
        let mut len2 = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            len2 += *v * *v;
        }
        let s = r / len2.sqrt();
        out.iter_mut().for_each(|v| *v *= s);
        debug_assert_eq!(out.len(), self.dim);
        self.ln_norm - self.rate * r
    }
}

/// Integrals over the electrons not pinned to fixed arguments.
struct SliceSampler {
    electrons: usize,
    /// Slot tuples receiving the fixed arguments, one per term.
    terms: Vec<Vec<usize>>,
    proposal: RadialExponential,
}

struct SliceScratch {
    free: Vec<Vec3>,
    bra: Configuration,
    ket: Configuration,
}

impl SliceSampler {
    fn new(electrons: usize, fixed: usize, mode: SumMode, rate: f64) -> Self {
        let terms = match mode {
            SumMode::FirstTerm => vec![(0..fixed).collect()],
            SumMode::FullSum => ordered_tuples(electrons, fixed),
        };
        Self {
            electrons,
            terms,
            proposal: RadialExponential::new(rate),
        }
    }

    fn free_count(&self) -> usize {
        self.electrons - self.terms[0].len()
    }

    fn scratch(&self) -> SliceScratch {
        SliceScratch {
            free: vec![[0.0; 3]; self.free_count()],
            bra: Configuration::zeros(self.electrons),
            ket: Configuration::zeros(self.electrons),
        }
    }

    /// Draws the free electrons; returns `1/q`.
    fn draw(&self, rng: &mut ChaCha8Rng, scratch: &mut SliceScratch) -> f64 {
        let mut ln_q = 0.0;
        for y in scratch.free.iter_mut() {
            let (p, l) = self.proposal.draw(rng);
            *y = p;
            ln_q += l;
        }
        (-ln_q).exp()
    }

    fn splice(slots: &[usize], fixed: &[Vec3], free: &[Vec3], out: &mut Configuration) {
        let mut next = free.iter();
        for (j, xj) in out.positions_mut().iter_mut().enumerate() {
            *xj = match slots.iter().position(|&s| s == j) {
                Some(i) => fixed[i],
                None => *next.next().expect("enough free electrons"),
            };
        }
    }

    /// `Σ_terms ψ(bra spliced) ψ(ket spliced)` at the current free electrons.
    fn integrand<M>(&self, model: &M, bra: &[Vec3], ket: &[Vec3], scratch: &mut SliceScratch) -> f64
    where
        M: WavefunctionModel + ?Sized,
    {
        let same = bra == ket;
        let mut total = 0.0;
        for slots in &self.terms {
            Self::splice(slots, bra, &scratch.free, &mut scratch.bra);
            let a = model.eval(&scratch.bra);
            let b = if same {
                a
            } else {
                Self::splice(slots, ket, &scratch.free, &mut scratch.ket);
                model.eval(&scratch.ket)
            };
            total += a * b;
        }
        total
    }
}

fn ordered_tuples(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|t: Vec<usize>| {
                (0..n)
                    .filter(|j| !t.contains(j))
                    .map(|j| {
                        let mut u = t.clone();
                        u.push(j);
                        u
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    out
}

/// Estimates `∫ ψ(bra, ·) ψ(ket, ·)` for each `(bra, ket)` of `pairs`, sharing
/// all draws, then returns the linear combinations `combos` of those values.
fn slice_functionals<M>(
    model: &M,
    system: &MolecularSystem,
    fixed: usize,
    pairs: &[(Vec<Vec3>, Vec<Vec3>)],
    combos: &[Vec<(usize, f64)>],
    mc_settings: &MCSettings,
) -> Result<Vec<DensityEstimate>>
where
    M: WavefunctionModel + ?Sized,
{
    mc_settings.validate()?;
    let n = check_model(model, system)?;
    let rate = 2.0 * mc_settings.effective_exponent(&model.certificate());
    let sampler = SliceSampler::new(n, fixed, mc_settings.mode, rate);
    let combine = |values: &[f64], out: &mut [f64]| {
        for (o, combo) in out.iter_mut().zip(combos) {
            *o = combo.iter().map(|&(i, w)| w * values[i]).sum();
        }
    };
    if sampler.free_count() == 0 {
        let mut scratch = sampler.scratch();
        let values: Vec<f64> = pairs
            .iter()
            .map(|(b, k)| sampler.integrand(model, b, k, &mut scratch))
            .collect();
        let mut out = vec![0.0; combos.len()];
        combine(&values, &mut out);
        return Ok(out
            .into_iter()
            .map(|v| DensityEstimate::exact(v, mc_settings.seed))
            .collect());
    }
    let stats = mc::integrate_many(
        mc_settings.samples,
        mc_settings.seed,
        combos.len(),
        || (sampler.scratch(), vec![0.0; pairs.len()]),
        |rng, (scratch, values), out| {
            let weight = sampler.draw(rng, scratch);
            for (v, (b, k)) in values.iter_mut().zip(pairs) {
                *v = weight * sampler.integrand(model, b, k, scratch);
            }
            combine(values, out);
        },
    );
    Ok(stats
        .iter()
        .map(|s| DensityEstimate::from_stats(s, mc_settings.seed))
        .collect())
}

fn single<M>(
    model: &M,
    system: &MolecularSystem,
    fixed: usize,
    bra: Vec<Vec3>,
    ket: Vec<Vec3>,
    mc_settings: &MCSettings,
) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    let est = slice_functionals(model, system, fixed, &[(bra, ket)], &[vec![(0, 1.0)]], mc_settings)?;
    Ok(est[0])
}

/// `ρ(x)`. Exact (`std_error = 0`, `samples = 0`) for `N = 1`.
pub fn estimate_rho<M>(model: &M, system: &MolecularSystem, x: Vec3, mc: &MCSettings) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    single(model, system, 1, vec![x], vec![x], mc)
}

/// `ρ` at several points with shared draws.
pub fn estimate_rho_many<M>(
    model: &M,
    system: &MolecularSystem,
    points: &[Vec3],
    mc: &MCSettings,
) -> Result<Vec<DensityEstimate>>
where
    M: WavefunctionModel + ?Sized,
{
    let pairs: Vec<_> = points.iter().map(|&p| (vec![p], vec![p])).collect();
    let combos: Vec<_> = (0..points.len()).map(|i| vec![(i, 1.0)]).collect();
    slice_functionals(model, system, 1, &pairs, &combos, mc)
}

/// `ρ₂(x, x')`. Exact for `N = 2`.
pub fn estimate_rho2<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    x_prime: Vec3,
    mc: &MCSettings,
) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    if system.electron_count() < 2 {
        return Err(Error::TooFewElectrons("the two-electron density"));
    }
    single(model, system, 2, vec![x, x_prime], vec![x, x_prime], mc)
}

/// `γ₁(x, x')`. `γ₁(x, x)` follows the same path as [`estimate_rho`].
pub fn estimate_gamma1<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    x_prime: Vec3,
    mc: &MCSettings,
) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    single(model, system, 1, vec![x], vec![x_prime], mc)
}

/// `n(x) = ρ₂(x, x)`.
pub fn estimate_n<M>(model: &M, system: &MolecularSystem, x: Vec3, mc: &MCSettings) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    estimate_rho2(model, system, x, x, mc)
}

/// `‖ψ‖² = ∫ ψ²` over all of ℝ^{3N}.
pub fn estimate_norm<M>(model: &M, system: &MolecularSystem, mc: &MCSettings) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    single(model, system, 0, Vec::new(), Vec::new(), &mc.with_mode(SumMode::FirstTerm))
}

/// Central finite difference `∂^γ ρ(x)` at step `h` with shared draws, so the
/// Monte-Carlo noise largely cancels between stencil points.
pub fn estimate_rho_fd<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    gamma: MultiIndex,
    h: f64,
    mc: &MCSettings,
) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    let stencil = gamma.stencil(h);
    let pairs: Vec<_> = stencil
        .iter()
        .map(|(o, _)| {
            let p = geom::add(x, *o);
            (vec![p], vec![p])
        })
        .collect();
    let combo: Vec<_> = stencil.iter().enumerate().map(|(i, (_, w))| (i, *w)).collect();
    Ok(slice_functionals(model, system, 1, &pairs, &[combo], mc)?[0])
}

/// Estimates of `∂^γ ρ_I(x)` for a set of selections and multi-indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteredEstimates {
    pub selections: Vec<Vec<(usize, usize)>>,
    pub gammas: Vec<MultiIndex>,
    /// `[selection][gamma]`.
    pub per_selection: Vec<Vec<DensityEstimate>>,
    /// `Σ_I` per gamma, with the standard error of the per-sample sum.
    pub total: Vec<DensityEstimate>,
}

struct ClusterTerm<'a> {
    selection: &'a ClusterSelection,
    frame: ClusterFrame,
    weights: Vec<f64>,
    prefactors: Vec<f64>,
}

/// Joint estimator over `selections` and `gammas`, all sharing one stream of
/// draws `x'`.
pub fn estimate_clustered<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    selections: &[ClusterSelection],
    gammas: &[MultiIndex],
    family: &CutoffFamily,
    mc_settings: &MCSettings,
) -> Result<ClusteredEstimates>
where
    M: WavefunctionModel + ?Sized,
{
    mc_settings.validate()?;
    let n = check_model(model, system)?;
    if let Some(g) = gammas.iter().find(|g| g.order() > 2) {
        return Err(Error::UnsupportedOrder(g.order()));
    }
    for s in selections {
        if s.electron_count() != n {
            return Err(Error::ElectronCountMismatch {
                expected: n,
                got: s.electron_count(),
            });
        }
    }
    if family.electron_count() != n {
        return Err(Error::ElectronCountMismatch {
            expected: n,
            got: family.electron_count(),
        });
    }
    let dn = system.nearest_nucleus_distance(x);
    if !(dn > family.radius()) {
        return Err(Error::Precondition(format!(
            "x must lie outside the balls of radius R = {} around the nuclei (distance {dn})",
            family.radius()
        )));
    }
    let needs_jets = gammas.iter().any(|g| g.order() > 0);
    let terms: Vec<ClusterTerm> = selections
        .iter()
        .map(|s| {
            let frame = ClusterFrame::build(n, &cluster::equivalence_class(s).p())?;
            let weights = frame.centre_weights();
            let prefactors = gammas
                .iter()
                .map(|g| chain_rule_prefactor(frame.cluster_size(), g.order()))
                .collect();
            Ok(ClusterTerm {
                selection: s,
                frame,
                weights,
                prefactors,
            })
        })
        .collect::<Result<_>>()?;

    let ng = gammas.len();
    let evaluate = |term: &ClusterTerm, config: &Configuration, weight: f64, out: &mut [f64]| -> Result<()> {
        if needs_jets {
            let psi = wavefunction::translation_derivatives(model, config, &term.weights)?;
            let psi = Jet {
                value: psi.value,
                first: psi.first,
                second: psi.second,
            };
            let g = psi.product(&psi).product(&cluster::phi_translation_jet(
                term.selection,
                family,
                config,
                &term.weights,
            ));
            for ((o, gamma), pre) in out.iter_mut().zip(gammas).zip(&term.prefactors) {
                *o = weight * pre * gamma.component(&g);
            }
        } else {
            let v = model.eval(config);
            let g = v * v * cluster::phi(term.selection, family, config);
            for (o, pre) in out.iter_mut().zip(&term.prefactors) {
                *o = weight * pre * g;
            }
        }
        Ok(())
    };
    if needs_jets {
        // Surface missing analytic derivatives before sampling.
        let probe = Configuration::new(vec![x; n]);
        wavefunction::translation_derivatives(model, &probe, &terms[0].weights)?;
    }

    let outputs = (selections.len() + 1) * ng;
    let pack = |per: Vec<Vec<DensityEstimate>>, total: Vec<DensityEstimate>| ClusteredEstimates {
        selections: selections.iter().map(|s| s.included()).collect(),
        gammas: gammas.to_vec(),
        per_selection: per,
        total,
    };

    if n == 1 {
        let config = Configuration::new(vec![x]);
        let mut out = vec![0.0; outputs];
        for (i, term) in terms.iter().enumerate() {
            let (head, tail) = out.split_at_mut(selections.len() * ng);
            evaluate(term, &config, 1.0, &mut head[i * ng..(i + 1) * ng])?;
            for g in 0..ng {
                tail[g] += head[i * ng + g];
            }
        }
        let exact: Vec<DensityEstimate> = out.iter().map(|&v| DensityEstimate::exact(v, mc_settings.seed)).collect();
        let per = exact[..selections.len() * ng].chunks(ng).map(<[_]>::to_vec).collect();
        return Ok(pack(per, exact[selections.len() * ng..].to_vec()));
    }

    let dim = 3 * (n - 1);
    let rate = 2.0 * mc_settings.effective_exponent(&model.certificate());
    let proposal = IsotropicExponential::new(dim, rate);
    let stats = mc::integrate_many(
        mc_settings.samples,
        mc_settings.seed,
        outputs,
        || (vec![0.0; dim], Configuration::zeros(n)),
        |rng, (z, config), out| {
            let weight = (-proposal.draw(rng, z)).exp();
            let (head, tail) = out.split_at_mut(selections.len() * ng);
            tail.fill(0.0);
            for (i, term) in terms.iter().enumerate() {
                let s1 = (term.frame.cluster_size() as f64).sqrt();
                let x_p = geom::scale(geom::sub(x, term.frame.offset(0, z)), s1);
                term.frame.inverse_into(x_p, z, config);
                let slot = &mut head[i * ng..(i + 1) * ng];
                evaluate(term, config, weight, slot).expect("derivatives checked before sampling");
                for g in 0..ng {
                    tail[g] += slot[g];
                }
            }
        },
    );
    let est: Vec<DensityEstimate> = stats
        .iter()
        .map(|s| DensityEstimate::from_stats(s, mc_settings.seed))
        .collect();
    let per = est[..selections.len() * ng].chunks(ng).map(<[_]>::to_vec).collect();
    Ok(pack(per, est[selections.len() * ng..].to_vec()))
}

/// `ρ_I(x) = N₁^{3/2} ∫ (ψ²φ_I)(T*(√N₁(x - t₁*x'), x')) dx'`.
pub fn estimate_rho_clustered<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    selection: &ClusterSelection,
    family: &CutoffFamily,
    mc: &MCSettings,
) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    let est = estimate_clustered(
        model,
        system,
        x,
        std::slice::from_ref(selection),
        &[MultiIndex::ZERO],
        family,
        mc,
    )?;
    Ok(est.per_selection[0][0])
}

/// `∂^γ ρ_I(x)` from the differentiated integrand, `|γ| ≤ 2`.
pub fn estimate_rho_derivative<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    gamma: MultiIndex,
    selection: &ClusterSelection,
    family: &CutoffFamily,
    mc: &MCSettings,
) -> Result<DensityEstimate>
where
    M: WavefunctionModel + ?Sized,
{
    if gamma.order() > 2 {
        return Err(Error::UnsupportedOrder(gamma.order()));
    }
    if gamma.order() == 0 {
        return estimate_rho_clustered(model, system, x, selection, family, mc);
    }
    let est = estimate_clustered(model, system, x, std::slice::from_ref(selection), &[gamma], family, mc)?;
    Ok(est.per_selection[0][0])
}

/// `∂^γ ρ(x) = Σ_I ∂^γ ρ_I(x)` over every selection, `|γ| ≤ 2`.
pub fn estimate_rho_derivative_total<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    gammas: &[MultiIndex],
    family: &CutoffFamily,
    mc: &MCSettings,
) -> Result<ClusteredEstimates>
where
    M: WavefunctionModel + ?Sized,
{
    let selections: Vec<_> = cluster::all_selections(system.electron_count())?.collect();
    estimate_clustered(model, system, x, &selections, gammas, family, mc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeSettings {
    /// Highest axis derivative order, 1 to 3.
    pub max_order: usize,
    /// Largest step `h` of the ladder `h, h/2, h/4`.
    pub step: f64,
    /// Step of the one-sided first-derivative stencils.
    pub cusp_step: f64,
    /// A cusp is flagged when the one-sided derivatives differ by more than
    /// `cusp_tolerance · ρ(x)`.
    pub cusp_tolerance: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            max_order: 3,
            step: 0.1,
            cusp_step: 0.01,
            cusp_tolerance: 0.1,
        }
    }
}

/// Orders at or above this count as smooth-consistent.
pub const SMOOTH_ORDER: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeRow {
    pub gamma: MultiIndex,
    pub steps: [f64; 3],
    pub estimates: [f64; 3],
    pub std_errors: [f64; 3],
    /// `(4 D(h/2) - D(h))/3` and `(4 D(h/4) - D(h/2))/3`.
    pub extrapolants: [f64; 2],
    /// `log₂ |D(h) - D(h/2)| / |D(h/2) - D(h/4)|`; NaN when undefined.
    pub consistency_order: f64,
    /// The ladder is constant to within noise and rounding, as for
    /// derivatives that vanish by symmetry. Counts as smooth.
    pub flat: bool,
    pub smooth: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OneSidedDerivatives {
    pub axis: usize,
    pub forward: f64,
    pub backward: f64,
    pub mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeTable {
    pub point: Vec3,
    pub rho: DensityEstimate,
    pub rows: Vec<DerivativeRow>,
    pub one_sided: Vec<OneSidedDerivatives>,
    pub max_mismatch: f64,
    pub cusp: bool,
    /// Every row is smooth-consistent.
    pub smooth: bool,
}

/// Finite-difference ladder of `ρ` along the coordinate axes at `x`, plus
/// one-sided first derivatives for cusp detection. All stencil points share
/// the same draws.
pub fn smoothness_probe<M>(
    model: &M,
    system: &MolecularSystem,
    x: Vec3,
    settings: &ProbeSettings,
    mc: &MCSettings,
) -> Result<DerivativeTable>
where
    M: WavefunctionModel + ?Sized,
{
    if !(1..=3).contains(&settings.max_order) {
        return Err(Error::UnsupportedOrder(settings.max_order));
    }
    if !(settings.step > 0.0 && settings.cusp_step > 0.0) {
        return Err(Error::Precondition("probe steps must be positive".into()));
    }
    let mut points: Vec<Vec3> = vec![x];
    let index = |p: Vec3, points: &mut Vec<Vec3>| -> usize {
        match points.iter().position(|q| *q == p) {
            Some(i) => i,
            None => {
                points.push(p);
                points.len() - 1
            }
        }
    };
    let mut combos: Vec<Vec<(usize, f64)>> = vec![vec![(0, 1.0)]];
    let mut layout = Vec::new();
    for axis in 0..3 {
        for order in 1..=settings.max_order {
            let gamma = MultiIndex::axis(axis, order);
            let steps = [settings.step, settings.step / 2.0, settings.step / 4.0];
            for h in steps {
                let combo = gamma
                    .stencil(h)
                    .into_iter()
                    .map(|(o, w)| (index(geom::add(x, o), &mut points), w))
                    .collect();
                combos.push(combo);
            }
            layout.push((gamma, steps));
        }
    }
    let hc = settings.cusp_step;
    for axis in 0..3 {
        let at = |t: f64| {
            let mut p = x;
            p[axis] += t * hc;
            p
        };
        let fwd = vec![
            (0, -1.5 / hc),
            (index(at(1.0), &mut points), 2.0 / hc),
            (index(at(2.0), &mut points), -0.5 / hc),
        ];
        let bwd = vec![
            (0, 1.5 / hc),
            (index(at(-1.0), &mut points), -2.0 / hc),
            (index(at(-2.0), &mut points), 0.5 / hc),
        ];
        combos.push(fwd);
        combos.push(bwd);
    }
    let pairs: Vec<_> = points.iter().map(|&p| (vec![p], vec![p])).collect();
    let est = slice_functionals(model, system, 1, &pairs, &combos, mc)?;

    let rho = est[0];
    let mut rows = Vec::new();
    for (i, (gamma, steps)) in layout.into_iter().enumerate() {
        let e = &est[1 + 3 * i..4 + 3 * i];
        let d = [e[0].value, e[1].value, e[2].value];
        let p = ((d[0] - d[1]).abs() / (d[1] - d[2]).abs()).log2();
        let consistency_order = if p.is_finite() { p } else { f64::NAN };
        let sigma = e.iter().map(|v| v.std_error).fold(0.0, f64::max);
        let rounding = 1e-10 * rho.value.abs() / steps[2].powi(gamma.order() as i32);
        let flat = (d[0] - d[1]).abs().max((d[1] - d[2]).abs()) <= 3.0 * sigma + rounding;
        rows.push(DerivativeRow {
            gamma,
            steps,
            estimates: d,
            std_errors: [e[0].std_error, e[1].std_error, e[2].std_error],
            extrapolants: [(4.0 * d[1] - d[0]) / 3.0, (4.0 * d[2] - d[1]) / 3.0],
            consistency_order,
            flat,
            smooth: flat || consistency_order >= SMOOTH_ORDER,
        });
    }
    let base = 1 + 3 * rows.len();
    let one_sided: Vec<OneSidedDerivatives> = (0..3)
        .map(|axis| {
            let forward = est[base + 2 * axis].value;
            let backward = est[base + 2 * axis + 1].value;
            OneSidedDerivatives {
                axis,
                forward,
                backward,
                mismatch: (forward - backward).abs(),
            }
        })
        .collect();
    let max_mismatch = one_sided.iter().map(|o| o.mismatch).fold(0.0, f64::max);
    Ok(DerivativeTable {
        point: x,
        rho,
        smooth: rows.iter().all(|r| r.smooth),
        rows,
        one_sided,
        max_mismatch,
        cusp: max_mismatch > settings.cusp_tolerance * rho.value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecaySettings {
    /// Unit direction of the radial ray `r ↦ r·d`.
    pub direction: Vec3,
    /// Slack `ε_tol` in the bound `slope ≤ -(λ - ε_tol)`.
    pub eps_tol: f64,
    /// Cutoff radius `R` of the cluster decomposition used for `|γ| ∈ {1, 2}`.
    pub cutoff_radius: f64,
    /// Finite-difference step for `|γ| = 3`.
    pub fd_step: f64,
}

impl Default for DecaySettings {
    fn default() -> Self {
        let s = 1.0 / 3f64.sqrt();
        Self {
            direction: [s, s, s],
            eps_tol: 0.05,
            cutoff_radius: 1.0,
            fd_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub gamma: MultiIndex,
    pub radii: Vec<f64>,
    pub estimates: Vec<DensityEstimate>,
    pub slope: f64,
    pub intercept: f64,
    /// `-slope`.
    pub measured_rate: f64,
    /// Certificate rate `λ` of the model.
    pub certificate_rate: f64,
    /// `-(λ - ε_tol)`.
    pub bound: f64,
    pub satisfied: bool,
}

/// Least-squares slope of `ln |∂^γ ρ(r·d)|` against `r`.
///
/// `|γ| = 0` uses [`estimate_rho`], `|γ| ∈ {1, 2}` the chain-rule estimator
/// summed over all selections, `|γ| = 3` finite differences of shared-draw
/// estimates.
pub fn decay_fit<M>(
    model: &M,
    system: &MolecularSystem,
    gamma: MultiIndex,
    radii: &[f64],
    settings: &DecaySettings,
    mc: &MCSettings,
) -> Result<DecayFit>
where
    M: WavefunctionModel + ?Sized,
{
    if radii.len() < 2 {
        return Err(Error::Precondition("a decay fit needs at least two radii".into()));
    }
    let threshold = system.max_nucleus_norm() + 1.0;
    if let Some(r) = radii.iter().find(|&&r| !(r > threshold)) {
        return Err(Error::Precondition(format!(
            "radius {r} is not beyond max |R_l| + 1 = {threshold}"
        )));
    }
    if gamma.order() > 3 {
        return Err(Error::UnsupportedOrder(gamma.order()));
    }
    let len = geom::norm(settings.direction);
    if !(len > 0.0) {
        return Err(Error::Precondition("decay direction must be nonzero".into()));
    }
    let dir = geom::scale(settings.direction, 1.0 / len);
    let family = match gamma.order() {
        1 | 2 => Some(CutoffFamily::new(settings.cutoff_radius, system.electron_count())?),
        _ => None,
    };
    let mut estimates = Vec::with_capacity(radii.len());
    for &r in radii {
        let x = geom::scale(dir, r);
        let est = match (gamma.order(), &family) {
            (0, _) => estimate_rho(model, system, x, mc)?,
            (3, _) => estimate_rho_fd(model, system, x, gamma, settings.fd_step, mc)?,
            (_, Some(f)) => estimate_rho_derivative_total(model, system, x, &[gamma], f, mc)?.total[0],
            _ => unreachable!(),
        };
        if !(est.value.abs() > 3.0 * est.std_error) {
            return Err(Error::SignalBelowNoise {
                radius: r,
                value: est.value,
                std_error: est.std_error,
            });
        }
        estimates.push(est);
    }
    let ys: Vec<f64> = estimates.iter().map(|e| e.value.abs().ln()).collect();
    let (slope, intercept) = least_squares(radii, &ys);
    let lambda = model.certificate().lambda;
    let bound = -(lambda - settings.eps_tol);
    Ok(DecayFit {
        gamma,
        radii: radii.to_vec(),
        estimates,
        slope,
        intercept,
        measured_rate: -slope,
        certificate_rate: lambda,
        bound,
        satisfied: slope <= bound,
    })
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `‖(x, z)‖ ≥ (1 - ε)|x| + ε‖z‖`.
pub fn splitting_bound_holds(x: Vec3, z: &[f64], eps: f64) -> bool {
    let nx = geom::norm(x);
    let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let joint = (nx * nx + nz * nz).sqrt();
    joint >= (1.0 - eps) * nx + eps * nz
}

/// `c² e^{-2λ(1-ε)|x|} ∫_{ℝ^{3N-3}} e^{-2λε‖z‖} dz`, an upper bound for
/// `ρ(x)` (first term) implied by the certificate.
pub fn density_envelope(certificate: &DecayCertificate, eps: f64, electrons: usize, x: Vec3) -> f64 {
    let c2 = certificate.c * certificate.c;
    let head = c2 * (-2.0 * certificate.lambda * (1.0 - eps) * geom::norm(x)).exp();
    if electrons <= 1 {
        return head;
    }
    let dim = 3 * (electrons - 1);
    let rate = 2.0 * certificate.lambda * eps;
    // ∫ e^{-k‖z‖} dz = |S^{d-1}| Γ(d) / k^d.
    let p = IsotropicExponential::new(dim, rate);
    head * (-p.ln_norm).exp()
}
